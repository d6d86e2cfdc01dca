//! Batched forward pass with cached activations and the matching reverse pass.
//!
//! A batch of `B` inputs, each `d × ℓ`, is stacked into one `(B·d) × ℓ`
//! row-major buffer. Every linear map of the model acts along ℓ, so the
//! projections, head fusion and feed-forward block run as single GEMMs over
//! the whole stack; only the `d × d` attention scores are formed per sample.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{LayerParams, ModelParams, NormParams};
use super::ModelError;
use crate::linalg::{gemm, log_sum_exp, softmax_in_place, Operand};

/// Variance floor inside every layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub batch: usize,
    pub d: usize,
    pub l: usize,
}

impl Dims {
    fn rows(&self) -> usize {
        self.batch * self.d
    }
}

pub(crate) struct HeadCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `B` row-stochastic `d × d` blocks.
    pub(crate) probs: Vec<f64>,
    out: Vec<f64>,
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

pub(crate) struct LayerCache {
    input: Vec<f64>,
    pub(crate) heads: Vec<HeadCache>,
    mask1: Option<Vec<f64>>,
    norm1: NormCache,
    u: Vec<f64>,
    pre_act: Vec<f64>,
    hidden: Vec<f64>,
    mask2: Option<Vec<f64>>,
    norm2: NormCache,
}

/// Everything the reverse pass needs, plus the attention maps for inspection.
pub(crate) struct ForwardCache {
    pub(crate) dims: Dims,
    pub(crate) layers: Vec<LayerCache>,
    /// Final encoder output, `(B·d) × ℓ` = `B × (d·ℓ)`.
    pub(crate) features: Vec<f64>,
    /// `B × C`.
    pub(crate) logits: Vec<f64>,
}

/// Dropout state for one forward call: one generator per sample, so masks do
/// not depend on how a batch is partitioned.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rngs: &'a mut [ChaCha8Rng],
}

fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, 1.0, Operand::plain(a, k), Operand::plain(b, n), 0.0, &mut c);
    c
}

/// `c += aᵀ·b` with `a: m × k` stored, `b: m × n` stored, `c: k × n`.
fn acc_tn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm(k, m, n, 1.0, Operand::transposed(a, k), Operand::plain(b, n), 1.0, c);
}

/// `c += a·bᵀ` with `a: m × k`, `b: n × k` stored, `c: m × n`.
fn acc_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    gemm(m, k, n, 1.0, Operand::plain(a, k), Operand::transposed(b, k), 1.0, c);
}

fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn col_sums_into(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn draw_mask(dims: Dims, dropout: &mut Option<Dropout<'_>>) -> Option<Vec<f64>> {
    let dp = dropout.as_mut()?;
    if dp.rate == 0.0 {
        return None;
    }
    let keep = 1.0 - dp.rate;
    let scale = 1.0 / keep;
    let block = dims.d * dims.l;
    let mut mask = vec![0.0; dims.rows() * dims.l];
    for (b, chunk) in mask.chunks_mut(block).enumerate() {
        let rng = &mut dp.rngs[b];
        for m in chunk {
            *m = if rng.gen::<f64>() < keep { scale } else { 0.0 };
        }
    }
    Some(mask)
}

/// Per-row normalisation over ℓ followed by the per-position affine map.
fn layer_norm(x: &[f64], l: usize, p: &NormParams) -> (Vec<f64>, NormCache) {
    let rows = x.len() / l;
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * l..(r + 1) * l];
        let mean = xr.iter().sum::<f64>() / l as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..l {
            let h = (xr[c] - mean) * is;
            xhat[r * l + c] = h;
            y[r * l + c] = p.scale[c] * h + p.shift[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(dy: &[f64], l: usize, cache: &NormCache, p: &NormParams, grad: &mut NormParams) -> Vec<f64> {
    let rows = dy.len() / l;
    let mut dx = vec![0.0; dy.len()];
    let mut g = vec![0.0; l];
    for r in 0..rows {
        let dyr = &dy[r * l..(r + 1) * l];
        let xh = &cache.xhat[r * l..(r + 1) * l];
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for c in 0..l {
            grad.scale[c] += dyr[c] * xh[c];
            grad.shift[c] += dyr[c];
            g[c] = dyr[c] * p.scale[c];
            mean_g += g[c];
            mean_gx += g[c] * xh[c];
        }
        mean_g /= l as f64;
        mean_gx /= l as f64;
        let is = cache.inv_std[r];
        for c in 0..l {
            dx[r * l + c] = is * (g[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

/// Attention of one head over every sample of the stack.
fn head_forward(x: &[f64], dims: Dims, w_q: &[f64], w_k: &[f64], w_v: &[f64]) -> HeadCache {
    let Dims { batch, d, l } = dims;
    let rows = dims.rows();
    let q = matmul(x, rows, l, w_q, l);
    let k = matmul(x, rows, l, w_k, l);
    let v = matmul(x, rows, l, w_v, l);
    let mut probs = vec![0.0; batch * d * d];
    let mut out = vec![0.0; rows * l];
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    for b in 0..batch {
        let blk = b * d * l..(b + 1) * d * l;
        let pb = &mut probs[b * d * d..(b + 1) * d * d];
        gemm(
            d,
            l,
            d,
            inv_sqrt_d,
            Operand::plain(&q[blk.clone()], l),
            Operand::transposed(&k[blk.clone()], l),
            0.0,
            pb,
        );
        for row in pb.chunks_mut(d) {
            softmax_in_place(row);
        }
        gemm(
            d,
            d,
            l,
            1.0,
            Operand::plain(pb, d),
            Operand::plain(&v[blk.clone()], l),
            0.0,
            &mut out[blk],
        );
    }
    HeadCache { q, k, v, probs, out }
}

/// `[H₁, …, H_h]·W_o`, computed as `Σ_i H_i·W_o[iℓ..(i+1)ℓ, :]`.
fn fuse_heads(heads: &[HeadCache], dims: Dims, w_out: &[f64]) -> Vec<f64> {
    let l = dims.l;
    let rows = dims.rows();
    let mut m = vec![0.0; rows * l];
    for (i, h) in heads.iter().enumerate() {
        gemm(
            rows,
            l,
            l,
            1.0,
            Operand::plain(&h.out, l),
            Operand::plain(&w_out[i * l * l..(i + 1) * l * l], l),
            1.0,
            &mut m,
        );
    }
    m
}

pub(crate) fn mab(x: &[f64], dims: Dims, layer: &LayerParams) -> (Vec<HeadCache>, Vec<f64>) {
    let heads: Vec<HeadCache> = layer
        .heads
        .iter()
        .map(|h| head_forward(x, dims, h.query.as_slice(), h.key.as_slice(), h.value.as_slice()))
        .collect();
    let m = fuse_heads(&heads, dims, layer.w_out.as_slice());
    (heads, m)
}

pub(crate) fn head_only(x: &[f64], dims: Dims, w_q: &[f64], w_k: &[f64], w_v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = head_forward(x, dims, w_q, w_k, w_v);
    (h.out, h.probs)
}

pub(crate) fn layer_forward(
    x: Vec<f64>,
    dims: Dims,
    layer: &LayerParams,
    dropout: &mut Option<Dropout<'_>>,
) -> (LayerCache, Vec<f64>) {
    let l = dims.l;
    let rows = dims.rows();
    let hid = layer.ffb.b_a.len();

    let (heads, mut m) = mab(&x, dims, layer);
    debug_check_attention(&heads, dims);
    let mask1 = draw_mask(dims, dropout);
    if let Some(mask) = &mask1 {
        m.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
    }
    for (v, xi) in m.iter_mut().zip(&x) {
        *v += xi;
    }
    let (u, norm1) = layer_norm(&m, l, &layer.norm1);

    let mut pre_act = matmul(&u, rows, l, layer.ffb.w_a.as_slice(), hid);
    add_row_bias(&mut pre_act, &layer.ffb.b_a);
    let hidden: Vec<f64> = pre_act.iter().map(|v| v.max(0.0)).collect();
    let mut f = matmul(&hidden, rows, hid, layer.ffb.w_b.as_slice(), l);
    add_row_bias(&mut f, &layer.ffb.b_b);
    let mask2 = draw_mask(dims, dropout);
    if let Some(mask) = &mask2 {
        f.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
    }
    for (v, ui) in f.iter_mut().zip(&u) {
        *v += ui;
    }
    let (out, norm2) = layer_norm(&f, l, &layer.norm2);
    (
        LayerCache {
            input: x,
            heads,
            mask1,
            norm1,
            u,
            pre_act,
            hidden,
            mask2,
            norm2,
        },
        out,
    )
}

#[cfg(debug_assertions)]
fn debug_check_attention(heads: &[HeadCache], dims: Dims) {
    for h in heads {
        for row in h.probs.chunks(dims.d) {
            let sum: f64 = row.iter().sum();
            debug_assert!(
                row.iter().all(|p| *p >= 0.0) && (sum - 1.0).abs() <= 1e-6 || !sum.is_finite(),
                "attention row not stochastic: sum {sum}"
            );
        }
    }
}

#[cfg(not(debug_assertions))]
fn debug_check_attention(_: &[HeadCache], _: Dims) {}

pub(crate) fn forward(
    inputs: &[&[f64]],
    params: &ModelParams,
    mut dropout: Option<Dropout<'_>>,
) -> Result<ForwardCache, ModelError> {
    let cfg = &params.config;
    let dims = Dims {
        batch: inputs.len(),
        d: cfg.d,
        l: cfg.seq_len,
    };
    let block = dims.d * dims.l;
    let mut x = Vec::with_capacity(dims.rows() * dims.l);
    for inp in inputs {
        if inp.len() != block {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} values, expected {}×{}",
                inp.len(),
                dims.d,
                dims.l
            )));
        }
        x.extend_from_slice(inp);
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let (cache, out) = layer_forward(x, dims, layer, &mut dropout);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteActivation { layer: li });
        }
        layers.push(cache);
        x = out;
    }
    let c = cfg.num_classes;
    let mut logits = matmul(&x, dims.batch, block, params.classifier.weight.as_slice(), c);
    add_row_bias(&mut logits, &params.classifier.bias);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteActivation {
            layer: params.layers.len(),
        });
    }
    Ok(ForwardCache {
        dims,
        layers,
        features: x,
        logits,
    })
}

impl ForwardCache {
    pub(crate) fn probabilities(&self, num_classes: usize) -> Vec<Vec<f64>> {
        self.logits
            .chunks(num_classes)
            .map(|z| {
                let mut p = z.to_vec();
                softmax_in_place(&mut p);
                p
            })
            .collect()
    }
}

/// Sum over the stack of `−log p[label]`, computed with log-sum-exp.
pub(crate) fn summed_loss(logits: &[f64], labels: &[usize], num_classes: usize) -> f64 {
    logits
        .chunks(num_classes)
        .zip(labels)
        .map(|(z, &y)| log_sum_exp(z) - z[y])
        .sum()
}

/// Reverse pass. `loss_scale` multiplies every per-sample loss (1/B for a
/// batch mean). Gradients accumulate into `grads`.
pub(crate) fn backward(
    cache: &ForwardCache,
    labels: &[usize],
    params: &ModelParams,
    loss_scale: f64,
    grads: &mut ModelParams,
) {
    let dims = cache.dims;
    let c = params.config.num_classes;
    let block = dims.d * dims.l;

    let mut dlogits = vec![0.0; dims.batch * c];
    for ((dz, z), &y) in dlogits.chunks_mut(c).zip(cache.logits.chunks(c)).zip(labels) {
        dz.copy_from_slice(z);
        softmax_in_place(dz);
        dz[y] -= 1.0;
        dz.iter_mut().for_each(|v| *v *= loss_scale);
    }
    acc_tn(
        &cache.features,
        dims.batch,
        block,
        &dlogits,
        c,
        grads.classifier.weight.as_mut_slice(),
    );
    col_sums_into(&dlogits, c, &mut grads.classifier.bias);
    let mut dx = vec![0.0; dims.batch * block];
    acc_nt(&dlogits, dims.batch, c, params.classifier.weight.as_slice(), block, &mut dx);

    for ((lc, layer), lg) in cache
        .layers
        .iter()
        .zip(&params.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        dx = layer_backward(lc, dims, layer, dx, lg);
    }
}

fn layer_backward(cache: &LayerCache, dims: Dims, layer: &LayerParams, d_out: Vec<f64>, g: &mut LayerParams) -> Vec<f64> {
    let Dims { batch, d, l } = dims;
    let rows = dims.rows();
    let hid = layer.ffb.b_a.len();

    // second add & norm
    let d_r2 = layer_norm_backward(&d_out, l, &cache.norm2, &layer.norm2, &mut g.norm2);
    let mut d_u = d_r2.clone();
    let mut d_f = d_r2;
    if let Some(mask) = &cache.mask2 {
        d_f.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
    }

    // feed-forward block
    col_sums_into(&d_f, l, &mut g.ffb.b_b);
    acc_tn(&cache.hidden, rows, hid, &d_f, l, g.ffb.w_b.as_mut_slice());
    let mut d_a = vec![0.0; rows * hid];
    acc_nt(&d_f, rows, l, layer.ffb.w_b.as_slice(), hid, &mut d_a);
    for (da, a) in d_a.iter_mut().zip(&cache.pre_act) {
        if *a <= 0.0 {
            *da = 0.0;
        }
    }
    col_sums_into(&d_a, hid, &mut g.ffb.b_a);
    acc_tn(&cache.u, rows, l, &d_a, hid, g.ffb.w_a.as_mut_slice());
    acc_nt(&d_a, rows, hid, layer.ffb.w_a.as_slice(), l, &mut d_u);

    // first add & norm
    let d_r1 = layer_norm_backward(&d_u, l, &cache.norm1, &layer.norm1, &mut g.norm1);
    let mut d_x = d_r1.clone();
    let mut d_m = d_r1;
    if let Some(mask) = &cache.mask1 {
        d_m.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
    }

    // head fusion and attention
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut d_p = vec![0.0; d * d];
    for (i, (hc, (hp, hg))) in cache
        .heads
        .iter()
        .zip(layer.heads.iter().zip(g.heads.iter_mut()))
        .enumerate()
    {
        let wo = i * l * l..(i + 1) * l * l;
        acc_tn(&hc.out, rows, l, &d_m, l, &mut g.w_out.as_mut_slice()[wo.clone()]);
        let mut d_h = vec![0.0; rows * l];
        acc_nt(&d_m, rows, l, &layer.w_out.as_slice()[wo], l, &mut d_h);

        let mut d_q = vec![0.0; rows * l];
        let mut d_k = vec![0.0; rows * l];
        let mut d_v = vec![0.0; rows * l];
        for b in 0..batch {
            let blk = b * d * l..(b + 1) * d * l;
            let p = &hc.probs[b * d * d..(b + 1) * d * d];
            // dP = dH·Vᵀ
            gemm(
                d,
                l,
                d,
                1.0,
                Operand::plain(&d_h[blk.clone()], l),
                Operand::transposed(&hc.v[blk.clone()], l),
                0.0,
                &mut d_p,
            );
            // dV = Pᵀ·dH
            gemm(
                d,
                d,
                l,
                1.0,
                Operand::transposed(p, d),
                Operand::plain(&d_h[blk.clone()], l),
                0.0,
                &mut d_v[blk.clone()],
            );
            // softmax Jacobian, row by row; reuse d_p as dS
            for (dp_row, p_row) in d_p.chunks_mut(d).zip(p.chunks(d)) {
                let dot: f64 = dp_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                for (ds, pr) in dp_row.iter_mut().zip(p_row) {
                    *ds = pr * (*ds - dot);
                }
            }
            // dQ = dS·K/√d, dK = dSᵀ·Q/√d
            gemm(
                d,
                d,
                l,
                inv_sqrt_d,
                Operand::plain(&d_p, d),
                Operand::plain(&hc.k[blk.clone()], l),
                0.0,
                &mut d_q[blk.clone()],
            );
            gemm(
                d,
                d,
                l,
                inv_sqrt_d,
                Operand::transposed(&d_p, d),
                Operand::plain(&hc.q[blk.clone()], l),
                0.0,
                &mut d_k[blk],
            );
        }
        acc_tn(&cache.input, rows, l, &d_q, l, hg.query.as_mut_slice());
        acc_tn(&cache.input, rows, l, &d_k, l, hg.key.as_mut_slice());
        acc_tn(&cache.input, rows, l, &d_v, l, hg.value.as_mut_slice());
        acc_nt(&d_q, rows, l, hp.query.as_slice(), l, &mut d_x);
        acc_nt(&d_k, rows, l, hp.key.as_slice(), l, &mut d_x);
        acc_nt(&d_v, rows, l, hp.value.as_slice(), l, &mut d_x);
    }
    d_x
}
