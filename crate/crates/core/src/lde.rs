//! Low-dimensional denoising embedding: a multi-level wavelet pyramid, the
//! denoised reconstruction and the DFT magnitude/phase of each lead, stacked
//! into a `9·channels × ℓ` matrix.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const DEFAULT_LEVELS: usize = 4;
/// Rows contributed by each lead.
pub const ROWS_PER_CHANNEL: usize = 9;
/// Phases of bins whose magnitude falls below this are pinned to zero.
pub const PHASE_MAGNITUDE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdeError {
    #[error("signal of length {len} is too short for a {levels}-level decomposition")]
    SignalTooShort { len: usize, levels: usize },
    #[error("inconsistent pyramid: {0}")]
    InconsistentPyramid(String),
    #[error("band {0} does not exist in this pyramid")]
    UnknownBand(Band),
    #[error("detail level {level} is outside 1..={levels}")]
    InvalidLevel { level: usize, levels: usize },
    #[error("unknown wavelet family {0:?}")]
    UnknownFamily(String),
    #[error("unknown row scheme {0:?}")]
    UnknownRowScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    #[default]
    Db4,
    Db6,
}

impl WaveletFamily {
    pub const ALL: [WaveletFamily; 3] = [WaveletFamily::Haar, WaveletFamily::Db4, WaveletFamily::Db6];

    pub fn name(self) -> &'static str {
        match self {
            WaveletFamily::Haar => "haar",
            WaveletFamily::Db4 => "db4",
            WaveletFamily::Db6 => "db6",
        }
    }

    /// Low-pass decomposition taps, applied as `Σ g[k]·x[2n − k]`.
    fn low_pass(self) -> &'static [f64] {
        match self {
            WaveletFamily::Haar => &[0.7071067811865476, 0.7071067811865476],
            WaveletFamily::Db4 => &[
                -0.010597401785069032,
                0.0328830116668852,
                0.030841381835560764,
                -0.18703481171909309,
                -0.027983769416859854,
                0.6308807679298589,
                0.7148465705529157,
                0.2303778133088965,
            ],
            WaveletFamily::Db6 => &[
                -0.0010773010853084796,
                0.004777257510945511,
                0.0005538422011614961,
                -0.03158203931748603,
                0.027522865530305727,
                0.09750160558732304,
                -0.12976686756726194,
                -0.22626469396543983,
                0.31525035170919763,
                0.7511339080210954,
                0.49462389039845306,
                0.11154074335010947,
            ],
        }
    }
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletFamily {
    type Err = LdeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|w| w.name() == s.to_ascii_lowercase())
            .ok_or_else(|| LdeError::UnknownFamily(s.to_string()))
    }
}

/// Orthogonal analysis filters. `h(k) = (−1)^k · g(K−1−k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilterPair {
    pub name: String,
    /// High-pass.
    pub h: Vec<f64>,
    /// Low-pass.
    pub g: Vec<f64>,
}

impl WaveletFilterPair {
    pub fn new(family: WaveletFamily) -> Self {
        let g = family.low_pass().to_vec();
        let k = g.len();
        let h = (0..k)
            .map(|i| if i % 2 == 0 { g[k - 1 - i] } else { -g[k - 1 - i] })
            .collect();
        Self {
            name: family.name().to_string(),
            h,
            g,
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

impl From<WaveletFamily> for WaveletFilterPair {
    fn from(f: WaveletFamily) -> Self {
        Self::new(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Half-sample symmetric extension: `x[−1] = x[0]`, `x[N] = x[N−1]`.
    #[default]
    Symmetric,
}

/// A pyramid band; levels count from 1 (finest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    Approx(usize),
    Detail(usize),
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::Approx(j) => write!(f, "L{j}"),
            Band::Detail(j) => write!(f, "H{j}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub approx: Vec<f64>,
    pub detail: Vec<f64>,
    /// Length of the signal this level was computed from.
    pub parent_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub filters: WaveletFilterPair,
    pub boundary: BoundaryMode,
    pub signal_len: usize,
    /// `levels[0]` is level 1.
    pub levels: Vec<PyramidLevel>,
}

/// Number of coefficients one analysis step produces from `parent_len` samples.
pub fn decimated_len(parent_len: usize, filter_len: usize) -> usize {
    (parent_len + filter_len - 1).div_ceil(2)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// One analysis step: `out[n] = Σ_k f[k]·x[2n − k]` over the symmetric extension.
fn analyze(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let out_len = decimated_len(n, f.len());
    let mut out = vec![0.0; out_len];
    for (i, o) in out.iter_mut().enumerate() {
        let base = 2 * i as isize;
        let interior = base >= (f.len() as isize - 1) && (base as usize) < n;
        *o = if interior {
            f.iter()
                .enumerate()
                .map(|(k, fk)| fk * x[base as usize - k])
                .sum()
        } else {
            f.iter()
                .enumerate()
                .map(|(k, fk)| fk * x[reflect(base - k as isize, n)])
                .sum()
        };
    }
    out
}

/// Transpose of [`analyze`] restricted to `parent_len` outputs, accumulated:
/// `out[t] += Σ_n c[n]·f[2n − t]`.
fn synthesize_into(coeffs: &[f64], f: &[f64], out: &mut [f64]) {
    let k = f.len();
    for (t, o) in out.iter_mut().enumerate() {
        let lo = t.div_ceil(2);
        let hi = ((t + k - 1) / 2).min(coeffs.len().saturating_sub(1));
        let mut acc = 0.0;
        for n in lo..=hi {
            acc += coeffs[n] * f[2 * n - t];
        }
        *o += acc;
    }
}

/// Mallat cascade on the low-pass branch; level 0 approximation is `x`.
pub fn dwt_decompose(x: &[f64], filters: &WaveletFilterPair, levels: usize) -> Result<WaveletPyramid, LdeError> {
    if levels == 0 || levels >= usize::BITS as usize || x.len() < (1usize << levels) {
        return Err(LdeError::SignalTooShort { len: x.len(), levels });
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = x.to_vec();
    for _ in 0..levels {
        let approx = analyze(&current, &filters.g);
        let detail = analyze(&current, &filters.h);
        out.push(PyramidLevel {
            approx: approx.clone(),
            detail,
            parent_len: current.len(),
        });
        current = approx;
    }
    Ok(WaveletPyramid {
        filters: filters.clone(),
        boundary: BoundaryMode::Symmetric,
        signal_len: x.len(),
        levels: out,
    })
}

impl WaveletPyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn band(&self, band: Band) -> Result<&[f64], LdeError> {
        match band {
            Band::Approx(j) if (1..=self.num_levels()).contains(&j) => Ok(&self.levels[j - 1].approx),
            Band::Detail(j) if (1..=self.num_levels()).contains(&j) => Ok(&self.levels[j - 1].detail),
            _ => Err(LdeError::UnknownBand(band)),
        }
    }

    fn check_consistent(&self) -> Result<(), LdeError> {
        let k = self.filters.len();
        if k == 0 || self.filters.h.len() != k {
            return Err(LdeError::InconsistentPyramid("filter lengths differ".into()));
        }
        let mut parent = self.signal_len;
        for (i, lvl) in self.levels.iter().enumerate() {
            let want = decimated_len(parent, k);
            if lvl.parent_len != parent || lvl.approx.len() != want || lvl.detail.len() != want {
                return Err(LdeError::InconsistentPyramid(format!(
                    "level {} has parent {} and bands {}/{}, expected parent {parent} and {want} coefficients",
                    i + 1,
                    lvl.parent_len,
                    lvl.approx.len(),
                    lvl.detail.len()
                )));
            }
            parent = want;
        }
        Ok(())
    }

    /// Inverse cascade starting at `top` (1-based) from `approx`, including
    /// the detail band of every level `j ≤ top` for which `keep_detail(j)`.
    fn inverse_from(&self, top: usize, approx: Option<&[f64]>, keep_detail: impl Fn(usize) -> bool) -> Vec<f64> {
        let g = &self.filters.g;
        let h = &self.filters.h;
        let mut current: Vec<f64> = match approx {
            Some(a) => a.to_vec(),
            None => vec![0.0; self.levels[top - 1].approx.len()],
        };
        for j in (1..=top).rev() {
            let lvl = &self.levels[j - 1];
            let mut parent = vec![0.0; lvl.parent_len];
            synthesize_into(&current, g, &mut parent);
            if keep_detail(j) {
                synthesize_into(&lvl.detail, h, &mut parent);
            }
            current = parent;
        }
        current
    }
}

/// Inverse transform with the detail bands of `drop_detail_levels` zeroed.
/// Output has the original signal length.
pub fn dwt_reconstruct(pyramid: &WaveletPyramid, drop_detail_levels: &BTreeSet<usize>) -> Result<Vec<f64>, LdeError> {
    pyramid.check_consistent()?;
    let levels = pyramid.num_levels();
    if let Some(&level) = drop_detail_levels.iter().find(|&&l| l == 0 || l > levels) {
        return Err(LdeError::InvalidLevel { level, levels });
    }
    Ok(pyramid.inverse_from(levels, Some(&pyramid.levels[levels - 1].approx), |j| {
        !drop_detail_levels.contains(&j)
    }))
}

/// Full-length time-domain projection of a single band: every other band is
/// zeroed before the inverse cascade.
pub fn band_to_full_length(pyramid: &WaveletPyramid, band: Band) -> Result<Vec<f64>, LdeError> {
    pyramid.check_consistent()?;
    let coeffs = pyramid.band(band)?;
    Ok(match band {
        Band::Approx(j) => pyramid.inverse_from(j, Some(coeffs), |_| false),
        Band::Detail(j) => pyramid.inverse_from(j, None, |l| l == j),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DftMethod {
    /// O(N²) sum with an exact `(m·n) mod N` twiddle table.
    #[default]
    Direct,
    /// Chirp-z convolution through power-of-two FFTs.
    Bluestein,
}

pub fn dft(x: &[f64], method: DftMethod) -> Vec<Complex64> {
    match method {
        DftMethod::Direct => dft_direct(x),
        DftMethod::Bluestein => dft_bluestein(x),
    }
}

fn dft_direct(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let twiddle: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .collect();
    (0..n)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            let mut idx = 0usize;
            for &v in x {
                let (c, s) = twiddle[idx];
                re += v * c;
                im += v * s;
                idx += m;
                if idx >= n {
                    idx -= n;
                }
            }
            Complex64::new(re, im)
        })
        .collect()
}

fn dft_bluestein(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n <= 1 {
        return x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    }
    // w[k] = exp(−iπ k²/N); k² reduced mod 2N keeps the angle exact
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, -PI * k2 / n as f64)
        })
        .collect();
    let m = (2 * n - 1).next_power_of_two();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = chirp[k] * x[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    inv.process(&mut a);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| chirp[k] * a[k] * scale).collect()
}

/// Magnitude and phase in `(−π, π]` of the unnormalised DFT.
pub fn dft_features(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    dft_features_with(x, DftMethod::Direct)
}

pub fn dft_features_with(x: &[f64], method: DftMethod) -> (Vec<f64>, Vec<f64>) {
    let spectrum = dft(x, method);
    let z: Vec<f64> = spectrum.iter().map(|c| c.norm()).collect();
    let phi = spectrum
        .iter()
        .zip(&z)
        .map(|(c, &mag)| {
            if mag < PHASE_MAGNITUDE_FLOOR {
                0.0
            } else {
                let p = c.im.atan2(c.re);
                if p <= -PI {
                    PI
                } else {
                    p
                }
            }
        })
        .collect();
    (z, phi)
}

/// Which five wavelet rows accompany each lead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowScheme {
    /// Approximations L1..L4 followed by the deepest detail H4.
    #[default]
    AsPrinted,
    /// Details H1..H4 followed by the deepest approximation L4.
    Details,
}

impl RowScheme {
    pub fn bands(self, levels: usize) -> Vec<Band> {
        match self {
            RowScheme::AsPrinted => (1..=levels)
                .map(Band::Approx)
                .chain(std::iter::once(Band::Detail(levels)))
                .collect(),
            RowScheme::Details => (1..=levels)
                .map(Band::Detail)
                .chain(std::iter::once(Band::Approx(levels)))
                .collect(),
        }
    }
}

impl FromStr for RowScheme {
    type Err = LdeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as_printed" => Ok(RowScheme::AsPrinted),
            "details" => Ok(RowScheme::Details),
            _ => Err(LdeError::UnknownRowScheme(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdeConfig {
    pub wavelet: WaveletFamily,
    pub drop_detail_levels: BTreeSet<usize>,
    pub row_scheme: RowScheme,
    pub dft_method: DftMethod,
}

impl Default for LdeConfig {
    fn default() -> Self {
        Self {
            wavelet: WaveletFamily::Db4,
            drop_detail_levels: BTreeSet::from([1]),
            row_scheme: RowScheme::AsPrinted,
            dft_method: DftMethod::Direct,
        }
    }
}

/// Row offsets within one lead's block of [`ROWS_PER_CHANNEL`] rows.
pub mod row {
    pub const RAW: usize = 0;
    pub const BANDS: std::ops::Range<usize> = 1..6;
    pub const DENOISED: usize = 6;
    pub const MAGNITUDE: usize = 7;
    pub const PHASE: usize = 8;
}

/// `(9 · channels) × ℓ` embedding; lead `c` occupies rows `9c .. 9c + 9`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdeEmbedding {
    pub matrix: Matrix,
}

impl LdeEmbedding {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn channel_row(&self, channel: usize, offset: usize) -> &[f64] {
        self.matrix.row(channel * ROWS_PER_CHANNEL + offset)
    }
}

/// Embeds every lead of `signal` (`channels × ℓ`).
pub fn embed(signal: &Matrix, config: &LdeConfig) -> Result<LdeEmbedding, LdeError> {
    let filters = WaveletFilterPair::new(config.wavelet);
    let (channels, len) = signal.shape();
    let bands = config.row_scheme.bands(DEFAULT_LEVELS);
    let mut matrix = Matrix::zeros(channels * ROWS_PER_CHANNEL, len);
    for c in 0..channels {
        let x = signal.row(c);
        let pyramid = dwt_decompose(x, &filters, DEFAULT_LEVELS)?;
        let base = c * ROWS_PER_CHANNEL;
        matrix.row_mut(base + row::RAW).copy_from_slice(x);
        for (offset, &band) in row::BANDS.zip(&bands) {
            matrix
                .row_mut(base + offset)
                .copy_from_slice(&band_to_full_length(&pyramid, band)?);
        }
        matrix
            .row_mut(base + row::DENOISED)
            .copy_from_slice(&dwt_reconstruct(&pyramid, &config.drop_detail_levels)?);
        let (z, phi) = dft_features_with(x, config.dft_method);
        matrix.row_mut(base + row::MAGNITUDE).copy_from_slice(&z);
        matrix.row_mut(base + row::PHASE).copy_from_slice(&phi);
    }
    Ok(LdeEmbedding { matrix })
}
