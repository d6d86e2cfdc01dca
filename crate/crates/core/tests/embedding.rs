use std::collections::BTreeSet;

use ldtf_core::lde::{
    band_to_full_length, dft_features, dwt_decompose, dwt_reconstruct, embed, row, Band, LdeConfig, WaveletFamily,
    WaveletFilterPair, ROWS_PER_CHANNEL,
};
use ldtf_core::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn high_quartile_energy(x: &[f64]) -> f64 {
    let (z, _) = dft_features(x);
    let n = x.len();
    // bins nearest Nyquist on both sides of the spectrum
    (0..n)
        .filter(|&m| {
            let f = m.min(n - m);
            f >= 3 * n / 8
        })
        .map(|m| z[m] * z[m])
        .sum()
}

#[test]
fn dropping_finest_detail_removes_high_frequencies() {
    let x: Vec<f64> = (0..241)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 241.0).sin() + if t % 2 == 0 { 0.3 } else { -0.3 })
        .collect();
    for family in WaveletFamily::ALL {
        let pyr = dwt_decompose(&x, &WaveletFilterPair::new(family), 4).unwrap();
        let denoised = dwt_reconstruct(&pyr, &BTreeSet::from([1])).unwrap();
        assert_eq!(denoised.len(), 241);
        assert!(high_quartile_energy(&denoised) < high_quartile_energy(&x), "{family:?}");
    }
}

#[test]
fn coarsest_approximation_of_constant_is_constant() {
    for family in WaveletFamily::ALL {
        let x = vec![2.5; 241];
        let pyr = dwt_decompose(&x, &WaveletFilterPair::new(family), 4).unwrap();
        let l4 = band_to_full_length(&pyr, Band::Approx(4)).unwrap();
        assert!(l4.iter().all(|v| (v - 2.5).abs() < 1e-8), "{family:?}");
    }
}

#[test]
fn zero_pyramid_projects_to_zero() {
    let pyr = dwt_decompose(&[0.0; 241], &WaveletFilterPair::new(WaveletFamily::Db4), 4).unwrap();
    for band in [Band::Approx(1), Band::Approx(4), Band::Detail(4), Band::Detail(2)] {
        assert!(band_to_full_length(&pyr, band).unwrap().iter().all(|v| *v == 0.0));
    }
    assert!(dwt_reconstruct(&pyr, &BTreeSet::new()).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn zero_segment_embeds_to_zero() {
    let e = embed(&Matrix::zeros(2, 241), &LdeConfig::default()).unwrap();
    assert_eq!((e.rows(), e.cols()), (18, 241));
    assert!(e.matrix.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn embedding_scales_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Matrix::from_vec(2, 241, (0..482).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let alpha = 2.75;
    let scaled = Matrix::from_vec(2, 241, x.as_slice().iter().map(|v| v * alpha).collect());
    let config = LdeConfig::default();
    let a = embed(&x, &config).unwrap();
    let b = embed(&scaled, &config).unwrap();
    for c in 0..2 {
        for off in 0..ROWS_PER_CHANNEL {
            let (ra, rb) = (a.channel_row(c, off), b.channel_row(c, off));
            for (p, q) in ra.iter().zip(rb) {
                if off == row::PHASE {
                    assert!((p - q).abs() < 1e-9);
                } else {
                    assert!((p * alpha - q).abs() < 1e-9 * (1.0 + q.abs()));
                }
            }
        }
    }
}
