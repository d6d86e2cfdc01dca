mod common;

use common::{naive_analysis, naive_dft, naive_forward, naive_head, naive_loss, random_config, random_matrix, to_grid};
use ldtf_core::lde::{dft_features, dwt_decompose, WaveletFamily, WaveletFilterPair};
use ldtf_core::linalg::Matrix;
use ldtf_core::transformer::{attention_head, init_params, loss_and_grads, model_forward_traced, LAYER_NORM_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_diff(a: &[Vec<f64>], b: &Matrix) -> f64 {
    a.iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, v)| (v - b[(r, c)]).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn forward_matches_naive_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..120 {
        let cfg = random_config(&mut rng);
        let params = init_params(&cfg, cfg.seed).unwrap();
        let x = random_matrix(cfg.d, cfg.seq_len, &mut rng);
        let (probs, trace) = model_forward_traced(&x, &params, false, &mut rng).unwrap();
        let (want, maps) = naive_forward(&x, &params, LAYER_NORM_EPS);
        let diff = probs.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "case {case} {cfg:?}: probability diff {diff}");
        for (l, layer) in maps.iter().enumerate() {
            for (h, m) in layer.iter().enumerate() {
                assert!(grid_diff(m, &trace.attention[l][h]) < 1e-10, "case {case} attention {l}/{h}");
            }
        }
    }
}

#[test]
fn attention_head_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let d = rng.gen_range(1..8);
        let l = rng.gen_range(1..10);
        let y = random_matrix(d, l, &mut rng);
        let w: Vec<Matrix> = (0..3).map(|_| random_matrix(l, l, &mut rng)).collect();
        let got = attention_head(&y, &w[0], &w[1], &w[2]).unwrap();
        let (want, _) = naive_head(&to_grid(&y), &w[0], &w[1], &w[2]);
        assert!(grid_diff(&want, &got) < 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences_of_naive_loss() {
    // The loss is differentiated by the library and perturbed through the
    // independent forward pass, so both sides must agree on the model too.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..3 {
        let cfg = random_config(&mut rng);
        let params = init_params(&cfg, cfg.seed).unwrap();
        let batch: Vec<(Matrix, usize)> = (0..3)
            .map(|_| (random_matrix(cfg.d, cfg.seq_len, &mut rng), rng.gen_range(0..cfg.num_classes)))
            .collect();
        let refs: Vec<(&Matrix, usize)> = batch.iter().map(|(x, y)| (x, *y)).collect();
        let analytic = loss_and_grads(&refs, &params, &mut rng).unwrap();
        assert!((analytic.loss - naive_loss(&batch, &params, LAYER_NORM_EPS)).abs() < 1e-10);

        let eps = 1e-5;
        let grads = analytic.grads.tensors();
        let n_tensors = grads.len();
        for t in 0..n_tensors {
            let len = grads[t].data.len();
            let mut worst = 0.0f64;
            let mut scale = 1e-8f64;
            for i in 0..len {
                let mut plus = params.clone();
                plus.tensors_mut()[t].data[i] += eps;
                let mut minus = params.clone();
                minus.tensors_mut()[t].data[i] -= eps;
                let fd = (naive_loss(&batch, &plus, LAYER_NORM_EPS) - naive_loss(&batch, &minus, LAYER_NORM_EPS)) / (2.0 * eps);
                worst = worst.max((fd - grads[t].data[i]).abs());
                scale = scale.max(fd.abs());
            }
            assert!(worst / scale < 1e-4, "{}: {worst} / {scale}", grads[t].name);
        }
    }
}

#[test]
fn dwt_analysis_matches_padded_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for family in WaveletFamily::ALL {
        let filters = WaveletFilterPair::new(family);
        for len in [16, 17, 64, 241] {
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pyr = dwt_decompose(&x, &filters, 4).unwrap();
            let mut current = x.clone();
            for lvl in &pyr.levels {
                let a = naive_analysis(&current, &filters.g);
                let d = naive_analysis(&current, &filters.h);
                let diff_a = a.iter().zip(&lvl.approx).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                let diff_d = d.iter().zip(&lvl.detail).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert_eq!((a.len(), d.len()), (lvl.approx.len(), lvl.detail.len()));
                assert!(diff_a < 1e-10 && diff_d < 1e-10, "{family:?} len {len}");
                current = a;
            }
        }
    }
}

#[test]
fn db4_band_lengths_for_a_beat_window() {
    let pyr = dwt_decompose(&[0.0; 241], &WaveletFilterPair::new(WaveletFamily::Db4), 4).unwrap();
    let lens: Vec<usize> = pyr.levels.iter().map(|l| l.approx.len()).collect();
    assert_eq!(lens, vec![124, 66, 37, 22]);
}

#[test]
fn dft_matches_textbook_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for len in [1, 2, 7, 64, 241] {
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (z, phi) = dft_features(&x);
        for (m, (re, im)) in naive_dft(&x).into_iter().enumerate() {
            let mag = re.hypot(im);
            assert!((mag - z[m]).abs() < 1e-9 * (1.0 + mag));
            if mag > 1e-6 {
                let mut d = (im.atan2(re) - phi[m]).abs();
                d = d.min(2.0 * std::f64::consts::PI - d);
                assert!(d < 1e-9, "len {len} bin {m}");
            }
        }
    }
}

fn desk_params(d: usize, l: usize, heads: usize, hidden: usize, layers: usize, classes: usize, seed: u64) -> ldtf_core::transformer::ModelParams {
    let cfg = ldtf_core::transformer::ModelConfig {
        d,
        seq_len: l,
        num_heads: heads,
        num_layers: layers,
        ffb_hidden: hidden,
        num_classes: classes,
        dropout: 0.0,
        seed,
    };
    let mut p = init_params(&cfg, seed).unwrap();
    // non-trivial norms and biases so every term is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for t in p.tensors_mut() {
        if t.shape.len() == 1 {
            t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
    }
    p
}

#[test]
fn mab_desk_case_matches_naive() {
    let p = desk_params(3, 4, 2, 7, 1, 2, 11);
    let y = random_matrix(3, 4, &mut ChaCha8Rng::seed_from_u64(12));
    let got = ldtf_core::transformer::mab_forward(&y, &p.layers[0]).unwrap();
    let (want, _) = common::naive_mab(&to_grid(&y), &p.layers[0]);
    assert!(grid_diff(&want, &got) < 1e-12);
}

#[test]
fn encoder_layer_desk_case_matches_naive() {
    let p = desk_params(3, 4, 2, 7, 1, 2, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let y = random_matrix(3, 4, &mut rng);
    let got = ldtf_core::transformer::encoder_layer_forward(&y, &p.layers[0], 0.1, false, &mut rng).unwrap();
    let (want, _) = common::naive_layer(&to_grid(&y), &p.layers[0], LAYER_NORM_EPS);
    assert!(grid_diff(&want, &got) < 1e-10);
}

#[test]
fn tiny_model_matches_naive() {
    let p = desk_params(2, 3, 1, 5, 1, 2, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_matrix(2, 3, &mut rng);
    let got = ldtf_core::transformer::model_forward(&x, &p, false, &mut rng).unwrap();
    let (want, _) = naive_forward(&x, &p, LAYER_NORM_EPS);
    assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn softmax_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let shift = rng.gen_range(-500.0..500.0);
        let mut a = v.clone();
        let mut b: Vec<f64> = v.iter().map(|x| x + shift).collect();
        ldtf_core::linalg::softmax_in_place(&mut a);
        ldtf_core::linalg::softmax_in_place(&mut b);
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-9));
    }
}
