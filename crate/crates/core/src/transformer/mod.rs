//! Deep-narrow transformer classifier over `d × ℓ` embeddings.
//!
//! Attention runs across the `d` feature rows: each head forms a `d × d`
//! score matrix from `ℓ × ℓ` projections. Each encoder layer is
//! `LN(Y + drop(MAB(Y)))` followed by `LN(U + drop(FFB(U)))`; the classifier
//! flattens the last `d × ℓ` activation into one fully connected layer.

mod network;
mod params;
mod train;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::Matrix;
use network::{Dims, Dropout};

pub use network::LAYER_NORM_EPS;
pub use params::{
    count_params, glorot_bound, init_params, reconcile, ClassifierParams, FfbParams, HeadParams, LayerParams,
    ModelConfig, ModelParams, NormParams, ParamCount, Reconciliation, TensorView, TensorViewMut,
    REFERENCE_PER_LAYER, REFERENCE_TOTAL,
};
pub use train::{evaluate_loss, predict, train, train_from, EpochRecord, Parallelism, TrainHistory, TrainOptions, BATCH_SIZE, LEARNING_RATE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation after layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
}

/// Samples per forward/backward chunk. Chunks are the unit of parallel work
/// and are reduced in a fixed order, so results do not depend on thread count.
pub const CHUNK: usize = 16;

fn check_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<(), ModelError> {
    if m.shape() != (rows, cols) {
        return Err(ModelError::ShapeMismatch(format!(
            "{what} is {}×{}, expected {rows}×{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// `softmax((Y·W₁)(Y·W₂)ᵀ/√d)·(Y·W₃)` for one `d × ℓ` input.
pub fn attention_head(y: &Matrix, w1: &Matrix, w2: &Matrix, w3: &Matrix) -> Result<Matrix, ModelError> {
    let (d, l) = y.shape();
    for (w, name) in [(w1, "W1"), (w2, "W2"), (w3, "W3")] {
        check_shape(w, l, l, name)?;
    }
    let dims = Dims { batch: 1, d, l };
    let (out, _) = network::head_only(y.as_slice(), dims, w1.as_slice(), w2.as_slice(), w3.as_slice());
    Ok(Matrix::from_vec(d, l, out))
}

/// Row-stochastic `d × d` attention weights of one head.
pub fn attention_weights(y: &Matrix, w1: &Matrix, w2: &Matrix, w3: &Matrix) -> Result<Matrix, ModelError> {
    let (d, l) = y.shape();
    for (w, name) in [(w1, "W1"), (w2, "W2"), (w3, "W3")] {
        check_shape(w, l, l, name)?;
    }
    let dims = Dims { batch: 1, d, l };
    let (_, probs) = network::head_only(y.as_slice(), dims, w1.as_slice(), w2.as_slice(), w3.as_slice());
    Ok(Matrix::from_vec(d, d, probs))
}

fn check_layer(layer: &LayerParams, l: usize) -> Result<(), ModelError> {
    for (i, h) in layer.heads.iter().enumerate() {
        check_shape(&h.query, l, l, &format!("head {i} W1"))?;
        check_shape(&h.key, l, l, &format!("head {i} W2"))?;
        check_shape(&h.value, l, l, &format!("head {i} W3"))?;
    }
    check_shape(&layer.w_out, layer.heads.len() * l, l, "W_o")?;
    let hid = layer.ffb.b_a.len();
    check_shape(&layer.ffb.w_a, l, hid, "FFB W_a")?;
    check_shape(&layer.ffb.w_b, hid, l, "FFB W_b")?;
    if [&layer.norm1.scale, &layer.norm1.shift, &layer.norm2.scale, &layer.norm2.shift, &layer.ffb.b_b]
        .iter()
        .any(|v| v.len() != l)
    {
        return Err(ModelError::ShapeMismatch("norm or bias vector length differs from ℓ".into()));
    }
    Ok(())
}

/// Multi-head attention block: `[H₁, …, H_h]·W_o`.
pub fn mab_forward(y: &Matrix, layer: &LayerParams) -> Result<Matrix, ModelError> {
    let (d, l) = y.shape();
    check_layer(layer, l)?;
    let (_, m) = network::mab(y.as_slice(), Dims { batch: 1, d, l }, layer);
    Ok(Matrix::from_vec(d, l, m))
}

/// One encoder layer. Dropout at `dropout` applies only when `train_mode`.
pub fn encoder_layer_forward(
    y: &Matrix,
    layer: &LayerParams,
    dropout: f64,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<Matrix, ModelError> {
    let (d, l) = y.shape();
    check_layer(layer, l)?;
    let mut rngs = [ChaCha8Rng::seed_from_u64(rng.gen())];
    let mut dp = train_mode.then_some(Dropout {
        rate: dropout,
        rngs: &mut rngs,
    });
    let (_, out) = network::layer_forward(y.as_slice().to_vec(), Dims { batch: 1, d, l }, layer, &mut dp);
    Ok(Matrix::from_vec(d, l, out))
}

fn check_params(params: &ModelParams) -> Result<(), ModelError> {
    let cfg = &params.config;
    cfg.validate()?;
    if params.layers.len() != cfg.num_layers {
        return Err(ModelError::ShapeMismatch(format!(
            "{} layers, config says {}",
            params.layers.len(),
            cfg.num_layers
        )));
    }
    for layer in &params.layers {
        if layer.heads.len() != cfg.num_heads || layer.ffb.b_a.len() != cfg.ffb_hidden {
            return Err(ModelError::ShapeMismatch("layer does not match config".into()));
        }
        check_layer(layer, cfg.seq_len)?;
    }
    check_shape(
        &params.classifier.weight,
        cfg.d * cfg.seq_len,
        cfg.num_classes,
        "classifier weight",
    )?;
    if params.classifier.bias.len() != cfg.num_classes {
        return Err(ModelError::ShapeMismatch("classifier bias length".into()));
    }
    Ok(())
}

fn check_input(x: &Matrix, cfg: &ModelConfig) -> Result<(), ModelError> {
    check_shape(x, cfg.d, cfg.seq_len, "input")
}

/// Attention maps recorded during a forward pass: `attention[layer][head]` is `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub attention: Vec<Vec<Matrix>>,
}

impl ForwardTrace {
    /// Largest deviation of any attention row sum from 1, and the smallest entry.
    pub fn row_stochastic_error(&self) -> (f64, f64) {
        let mut worst = 0.0f64;
        let mut min = f64::INFINITY;
        for m in self.attention.iter().flatten() {
            for r in 0..m.rows() {
                let row = m.row(r);
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                min = row.iter().copied().fold(min, f64::min);
            }
        }
        (worst, min)
    }
}

/// Class probabilities for one embedding.
pub fn model_forward(x: &Matrix, params: &ModelParams, train_mode: bool, rng: &mut impl Rng) -> Result<Vec<f64>, ModelError> {
    model_forward_traced(x, params, train_mode, rng).map(|(p, _)| p)
}

pub fn model_forward_traced(
    x: &Matrix,
    params: &ModelParams,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
    check_params(params)?;
    check_input(x, &params.config)?;
    let mut rngs = [ChaCha8Rng::seed_from_u64(rng.gen())];
    let dp = train_mode.then_some(Dropout {
        rate: params.config.dropout,
        rngs: &mut rngs,
    });
    let cache = network::forward(&[x.as_slice()], params, dp)?;
    let d = params.config.d;
    let trace = ForwardTrace {
        attention: cache
            .layers
            .iter()
            .map(|lc| {
                lc.heads
                    .iter()
                    .map(|h| Matrix::from_vec(d, d, h.probs.clone()))
                    .collect()
            })
            .collect(),
    };
    let probs = cache.probabilities(params.config.num_classes).remove(0);
    Ok((probs, trace))
}

/// Mean cross-entropy over a batch and its gradient.
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: ModelParams,
    /// Samples whose arg-max prediction equals the label (under the
    /// dropout masks of this call).
    pub correct: usize,
}

/// Mean cross-entropy loss over `batch` and its exact gradient by reverse-mode
/// differentiation. Dropout is active at `params.config.dropout` with masks
/// drawn once per call from `rng` (one sub-stream per sample).
pub fn loss_and_grads(
    batch: &[(&Matrix, usize)],
    params: &ModelParams,
    rng: &mut impl Rng,
) -> Result<LossAndGrads, ModelError> {
    loss_and_grads_with(batch, params, rng, &Parallelism::default())
}

pub fn loss_and_grads_with(
    batch: &[(&Matrix, usize)],
    params: &ModelParams,
    rng: &mut impl Rng,
    parallelism: &Parallelism,
) -> Result<LossAndGrads, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_params(params)?;
    let cfg = &params.config;
    for (x, y) in batch {
        check_input(x, cfg)?;
        if *y >= cfg.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: *y,
                num_classes: cfg.num_classes,
            });
        }
    }
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
    let scale = 1.0 / batch.len() as f64;

    let run_chunk = |(chunk, seeds): (&[(&Matrix, usize)], &[u64])| -> Result<(f64, usize, ModelParams), ModelError> {
        let inputs: Vec<&[f64]> = chunk.iter().map(|(x, _)| x.as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|(_, y)| *y).collect();
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
        let dp = Some(Dropout {
            rate: cfg.dropout,
            rngs: &mut rngs,
        });
        let cache = network::forward(&inputs, params, dp)?;
        let loss = network::summed_loss(&cache.logits, &labels, cfg.num_classes);
        let correct = cache
            .logits
            .chunks(cfg.num_classes)
            .zip(&labels)
            .filter(|(z, &y)| argmax(z) == y)
            .count();
        let mut grads = ModelParams::zeros(cfg);
        network::backward(&cache, &labels, params, scale, &mut grads);
        Ok((loss, correct, grads))
    };

    let work: Vec<_> = batch.chunks(CHUNK).zip(seeds.chunks(CHUNK)).collect();
    let parts: Vec<Result<(f64, usize, ModelParams), ModelError>> = match parallelism.pool() {
        Some(pool) => pool.install(|| work.into_par_iter().map(run_chunk).collect()),
        None => work.into_iter().map(run_chunk).collect(),
    };

    let mut loss = 0.0;
    let mut correct = 0;
    let mut total: Option<ModelParams> = None;
    for part in parts {
        let (l, c, g) = part?;
        loss += l;
        correct += c;
        match &mut total {
            None => total = Some(g),
            Some(t) => t.add_assign(&g),
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    Ok(LossAndGrads {
        loss,
        grads: total.expect("non-empty batch"),
        correct,
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Plain gradient descent: `θ ← θ − lr·∇θ`.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<(), ModelError> {
    if !params.same_shape(grads) {
        return Err(ModelError::ShapeMismatch("gradient shapes differ from parameters".into()));
    }
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (w, dw) in p.data.iter_mut().zip(g.data) {
            *w -= lr * dw;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
