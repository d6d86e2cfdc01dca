//! Independent reference implementations used as test oracles. They are
//! written for clarity with nested loops over `Vec<Vec<f64>>`, sharing no
//! code with the library beyond the parameter containers.
#![allow(dead_code)]

use ldtf_core::linalg::Matrix;
use ldtf_core::transformer::{LayerParams, ModelConfig, ModelParams};
use rand::Rng;

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn random_config(rng: &mut impl Rng) -> ModelConfig {
    ModelConfig {
        d: rng.gen_range(1..=6),
        seq_len: rng.gen_range(1..=9),
        num_heads: rng.gen_range(1..=3),
        num_layers: rng.gen_range(1..=3),
        ffb_hidden: rng.gen_range(1..=12),
        num_classes: rng.gen_range(2..=5),
        dropout: 0.0,
        seed: rng.gen(),
    }
}

fn mul(a: &Grid, b: &Grid) -> Grid {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn transpose(a: &Grid) -> Grid {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn layer_norm(x: &Grid, gamma: &[f64], beta: &[f64], eps: f64) -> Grid {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(c, v)| gamma[c] * (v - mean) / (var + eps).sqrt() + beta[c])
                .collect()
        })
        .collect()
}

/// One head: softmax(Q Kᵀ / √d) V with Q = Y W₁, K = Y W₂, V = Y W₃.
/// Returns the output and the attention matrix.
pub fn naive_head(y: &Grid, w1: &Matrix, w2: &Matrix, w3: &Matrix) -> (Grid, Grid) {
    let d = y.len();
    let q = mul(y, &to_grid(w1));
    let k = mul(y, &to_grid(w2));
    let v = mul(y, &to_grid(w3));
    let scores = mul(&q, &transpose(&k));
    let attn: Grid = scores
        .iter()
        .map(|row| softmax(&row.iter().map(|s| s / (d as f64).sqrt()).collect::<Vec<_>>()))
        .collect();
    (mul(&attn, &v), attn)
}

/// `[H₁, …, H_h]·W_o` and the per-head attention matrices.
pub fn naive_mab(y: &Grid, layer: &LayerParams) -> (Grid, Vec<Grid>) {
    let mut concat: Grid = vec![Vec::new(); y.len()];
    let mut maps = Vec::new();
    for h in &layer.heads {
        let (out, attn) = naive_head(y, &h.query, &h.key, &h.value);
        for (row, o) in concat.iter_mut().zip(out) {
            row.extend(o);
        }
        maps.push(attn);
    }
    (mul(&concat, &to_grid(&layer.w_out)), maps)
}

/// One encoder layer in eval mode.
pub fn naive_layer(y: &Grid, layer: &LayerParams, eps: f64) -> (Grid, Vec<Grid>) {
    let (m, maps) = naive_mab(y, layer);
    let res1: Grid = m
        .iter()
        .zip(y)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect())
        .collect();
    let u = layer_norm(&res1, &layer.norm1.scale, &layer.norm1.shift, eps);
    let mut hidden = mul(&u, &to_grid(&layer.ffb.w_a));
    for row in &mut hidden {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v + layer.ffb.b_a[c]).max(0.0);
        }
    }
    let mut f = mul(&hidden, &to_grid(&layer.ffb.w_b));
    for (r, row) in f.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v += layer.ffb.b_b[c] + u[r][c];
        }
    }
    (layer_norm(&f, &layer.norm2.scale, &layer.norm2.shift, eps), maps)
}

/// Full eval-mode forward pass; returns class probabilities and every
/// attention matrix (`[layer][head]`).
pub fn naive_forward(x: &Matrix, p: &ModelParams, eps: f64) -> (Vec<f64>, Vec<Vec<Grid>>) {
    let mut y = to_grid(x);
    let mut maps = Vec::new();
    for layer in &p.layers {
        let (next, layer_maps) = naive_layer(&y, layer, eps);
        maps.push(layer_maps);
        y = next;
    }
    let flat: Vec<f64> = y.into_iter().flatten().collect();
    let w = to_grid(&p.classifier.weight);
    let logits: Vec<f64> = (0..p.config.num_classes)
        .map(|c| p.classifier.bias[c] + flat.iter().enumerate().map(|(i, v)| v * w[i][c]).sum::<f64>())
        .collect();
    (softmax(&logits), maps)
}

/// Mean cross-entropy of the naive forward pass.
pub fn naive_loss(batch: &[(Matrix, usize)], p: &ModelParams, eps: f64) -> f64 {
    batch
        .iter()
        .map(|(x, y)| -naive_forward(x, p, eps).0[*y].ln())
        .sum::<f64>()
        / batch.len() as f64
}

/// Textbook DFT with twiddles computed from the full angle every time.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|m| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * ((m * t) % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// One analysis step over an explicitly materialised half-sample symmetric
/// extension: `out[n] = Σ_k f[k]·x_ext[2n − k]`, `n < ceil((N + K − 1)/2)`.
pub fn naive_analysis(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let k = f.len() as isize;
    let pad = k + 2;
    let ext = |i: isize| -> f64 {
        // mirror repeatedly until inside [0, n)
        let mut j = i;
        while j < 0 || j >= n {
            if j < 0 {
                j = -j - 1;
            }
            if j >= n {
                j = 2 * n - 1 - j;
            }
        }
        x[j as usize]
    };
    let padded: Vec<f64> = (-pad..n + pad).map(ext).collect();
    let out_len = ((n + k - 1) + 1) / 2;
    (0..out_len)
        .map(|i| (0..k).map(|j| f[j as usize] * padded[(2 * i - j + pad) as usize]).sum())
        .collect()
}
