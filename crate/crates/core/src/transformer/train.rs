use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network;
use super::params::{init_params, ModelConfig, ModelParams};
use super::{argmax, check_input, check_params, loss_and_grads_with, sgd_step, ModelError, CHUNK};
use crate::eval::{confusion_matrix, recall_precision};
use crate::linalg::Matrix;

pub const BATCH_SIZE: usize = 64;
pub const LEARNING_RATE: f64 = 0.001;

const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;
const DROPOUT_STREAM: u64 = 0x4452_4f50_4f55_5431;

/// Worker pool for per-chunk forward/backward work. The default runs
/// everything on the calling thread.
#[derive(Clone, Default)]
pub struct Parallelism {
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl Parallelism {
    pub fn threads(n: usize) -> Result<Self, ModelError> {
        if n <= 1 {
            return Ok(Self::default());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ModelError::InvalidConfig(format!("thread pool: {e}")))?;
        Ok(Self {
            pool: Some(Arc::new(pool)),
        })
    }

    pub(crate) fn pool(&self) -> Option<&rayon::ThreadPool> {
        self.pool.as_deref()
    }
}

impl std::fmt::Debug for Parallelism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.pool {
            None => write!(f, "Parallelism(1)"),
            Some(p) => write!(f, "Parallelism({})", p.current_num_threads()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub parallelism: Parallelism,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: BATCH_SIZE,
            learning_rate: LEARNING_RATE,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches (train mode).
    pub loss: f64,
    pub accuracy: f64,
    pub val_recall_macro: Option<f64>,
    pub val_precision_macro: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,loss,accuracy[,val_recall_macro,val_precision_macro]`.
    pub fn to_csv(&self) -> String {
        let with_val = self.epochs.iter().any(|e| e.val_recall_macro.is_some());
        let mut s = String::from("epoch,loss,accuracy");
        if with_val {
            s.push_str(",val_recall_macro,val_precision_macro");
        }
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!("{},{:.17e},{:.17e}", e.epoch, e.loss, e.accuracy));
            if with_val {
                s.push_str(&format!(
                    ",{:.17e},{:.17e}",
                    e.val_recall_macro.unwrap_or(f64::NAN),
                    e.val_precision_macro.unwrap_or(f64::NAN)
                ));
            }
            s.push('\n');
        }
        s
    }
}

/// Minibatch SGD from `init_params(config, config.seed)`. Batches are drawn
/// from a seeded shuffle each epoch; the last partial batch is kept.
pub fn train(
    train_set: &[(Matrix, usize)],
    config: &ModelConfig,
    options: &TrainOptions,
    validation: Option<&[(Matrix, usize)]>,
) -> Result<(ModelParams, TrainHistory), ModelError> {
    let params = init_params(config, config.seed)?;
    train_from(params, train_set, options, validation)
}

/// Continues training from existing parameters.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[(Matrix, usize)],
    options: &TrainOptions,
    validation: Option<&[(Matrix, usize)]>,
) -> Result<(ModelParams, TrainHistory), ModelError> {
    let mut history = TrainHistory::default();
    if options.epochs == 0 {
        return Ok((params, history));
    }
    if train_set.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if options.batch_size == 0 {
        return Err(ModelError::InvalidConfig("batch size must be positive".into()));
    }
    let seed = params.config.seed;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=options.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(options.batch_size) {
            let batch: Vec<(&Matrix, usize)> = idx.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            let out = loss_and_grads_with(&batch, &params, &mut dropout_rng, &options.parallelism)?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.correct;
            sgd_step(&mut params, &out.grads, options.learning_rate)?;
        }
        let n = train_set.len() as f64;
        let mut record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            val_recall_macro: None,
            val_precision_macro: None,
        };
        if let Some(val) = validation.filter(|v| !v.is_empty()) {
            let inputs: Vec<&Matrix> = val.iter().map(|(x, _)| x).collect();
            let preds = predict(&params, &inputs, &options.parallelism)?;
            let labels: Vec<usize> = val.iter().map(|(_, y)| *y).collect();
            let cm = confusion_matrix(&preds, &labels, params.config.num_classes)
                .map_err(|e| ModelError::ShapeMismatch(e.to_string()))?;
            let report = recall_precision(&cm).map_err(|e| ModelError::ShapeMismatch(e.to_string()))?;
            record.val_recall_macro = Some(report.macro_recall);
            record.val_precision_macro = Some(report.macro_precision);
        }
        log::info!(
            "epoch {epoch}: loss {:.6} accuracy {:.4}",
            record.loss,
            record.accuracy
        );
        history.epochs.push(record);
    }
    Ok((params, history))
}

fn eval_chunks<T: Send>(
    params: &ModelParams,
    inputs: &[&Matrix],
    parallelism: &Parallelism,
    f: impl Fn(&[f64], usize) -> T + Sync,
) -> Result<Vec<T>, ModelError> {
    check_params(params)?;
    for x in inputs {
        check_input(x, &params.config)?;
    }
    let c = params.config.num_classes;
    let run = |chunk: &[&Matrix]| -> Result<Vec<T>, ModelError> {
        let xs: Vec<&[f64]> = chunk.iter().map(|x| x.as_slice()).collect();
        let cache = network::forward(&xs, params, None)?;
        Ok(cache.logits.chunks(c).enumerate().map(|(i, z)| f(z, i)).collect())
    };
    let chunks: Vec<&[&Matrix]> = inputs.chunks(CHUNK).collect();
    let parts: Vec<Result<Vec<T>, ModelError>> = match parallelism.pool() {
        Some(pool) => pool.install(|| chunks.into_par_iter().map(run).collect()),
        None => chunks.into_iter().map(run).collect(),
    };
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Arg-max class for each input, eval mode.
pub fn predict(params: &ModelParams, inputs: &[&Matrix], parallelism: &Parallelism) -> Result<Vec<usize>, ModelError> {
    eval_chunks(params, inputs, parallelism, |z, _| argmax(z))
}

/// Mean cross-entropy in eval mode (no dropout).
pub fn evaluate_loss(params: &ModelParams, data: &[(Matrix, usize)], parallelism: &Parallelism) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let inputs: Vec<&Matrix> = data.iter().map(|(x, _)| x).collect();
    let logits = eval_chunks(params, &inputs, parallelism, |z, _| z.to_vec())?;
    let total: f64 = logits
        .iter()
        .zip(data)
        .map(|(z, (_, y))| network::summed_loss(z, &[*y], z.len()))
        .sum();
    let mean = total / data.len() as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(ModelError::NonFiniteLoss)
    }
}
