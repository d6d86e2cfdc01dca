use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::linalg::Matrix;

/// Architecture and regularisation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding rows (feature dimension).
    pub d: usize,
    /// Row length ℓ.
    pub seq_len: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffb_hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 18,
            seq_len: 241,
            num_heads: 6,
            num_layers: 8,
            ffb_hidden: 4 * 241,
            num_classes: 5,
            dropout: 0.10,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d", self.d),
            ("seq_len", self.seq_len),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("ffb_hidden", self.ffb_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig("num_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Projections of one attention head, each `ℓ × ℓ`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

/// Learnable per-position scale and shift of a layer norm, each of length ℓ.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Two fully connected layers with a ReLU in between, applied to every row.
#[derive(Debug, Clone, PartialEq)]
pub struct FfbParams {
    /// `ℓ × hidden`.
    pub w_a: Matrix,
    pub b_a: Vec<f64>,
    /// `hidden × ℓ`.
    pub w_b: Matrix,
    pub b_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    /// Head fusion, `(heads·ℓ) × ℓ`.
    pub w_out: Matrix,
    pub norm1: NormParams,
    pub norm2: NormParams,
    pub ffb: FfbParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `(d·ℓ) × classes`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Every learnable tensor of the model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub classifier: ClassifierParams,
}

/// A borrowed view of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

impl ModelParams {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let l = config.seq_len;
        let hid = config.ffb_hidden;
        let layer = LayerParams {
            heads: (0..config.num_heads)
                .map(|_| HeadParams {
                    query: Matrix::zeros(l, l),
                    key: Matrix::zeros(l, l),
                    value: Matrix::zeros(l, l),
                })
                .collect(),
            w_out: Matrix::zeros(config.num_heads * l, l),
            norm1: NormParams {
                scale: vec![0.0; l],
                shift: vec![0.0; l],
            },
            norm2: NormParams {
                scale: vec![0.0; l],
                shift: vec![0.0; l],
            },
            ffb: FfbParams {
                w_a: Matrix::zeros(l, hid),
                b_a: vec![0.0; hid],
                w_b: Matrix::zeros(hid, l),
                b_b: vec![0.0; l],
            },
        };
        Self {
            config: config.clone(),
            layers: vec![layer; config.num_layers],
            classifier: ClassifierParams {
                weight: Matrix::zeros(config.d * l, config.num_classes),
                bias: vec![0.0; config.num_classes],
            },
        }
    }

    /// Tensors in canonical order (the checkpoint order).
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        fn mat(name: String, m: &Matrix) -> TensorView<'_> {
            TensorView {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.as_slice(),
            }
        }
        fn vec1(name: String, v: &[f64]) -> TensorView<'_> {
            TensorView {
                name,
                shape: vec![v.len()],
                data: v,
            }
        }
        for (li, layer) in self.layers.iter().enumerate() {
            for (hi, head) in layer.heads.iter().enumerate() {
                out.push(mat(format!("layer{li}.head{hi}.query"), &head.query));
                out.push(mat(format!("layer{li}.head{hi}.key"), &head.key));
                out.push(mat(format!("layer{li}.head{hi}.value"), &head.value));
            }
            out.push(mat(format!("layer{li}.w_out"), &layer.w_out));
            out.push(vec1(format!("layer{li}.norm1.scale"), &layer.norm1.scale));
            out.push(vec1(format!("layer{li}.norm1.shift"), &layer.norm1.shift));
            out.push(vec1(format!("layer{li}.norm2.scale"), &layer.norm2.scale));
            out.push(vec1(format!("layer{li}.norm2.shift"), &layer.norm2.shift));
            out.push(mat(format!("layer{li}.ffb.w_a"), &layer.ffb.w_a));
            out.push(vec1(format!("layer{li}.ffb.b_a"), &layer.ffb.b_a));
            out.push(mat(format!("layer{li}.ffb.w_b"), &layer.ffb.w_b));
            out.push(vec1(format!("layer{li}.ffb.b_b"), &layer.ffb.b_b));
        }
        out.push(mat("classifier.weight".into(), &self.classifier.weight));
        out.push(vec1("classifier.bias".into(), &self.classifier.bias));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        fn mat(name: String, m: &mut Matrix) -> TensorViewMut<'_> {
            TensorViewMut {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.as_mut_slice(),
            }
        }
        fn vec1(name: String, v: &mut [f64]) -> TensorViewMut<'_> {
            TensorViewMut {
                name,
                shape: vec![v.len()],
                data: v,
            }
        }
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (hi, head) in layer.heads.iter_mut().enumerate() {
                out.push(mat(format!("layer{li}.head{hi}.query"), &mut head.query));
                out.push(mat(format!("layer{li}.head{hi}.key"), &mut head.key));
                out.push(mat(format!("layer{li}.head{hi}.value"), &mut head.value));
            }
            out.push(mat(format!("layer{li}.w_out"), &mut layer.w_out));
            out.push(vec1(format!("layer{li}.norm1.scale"), &mut layer.norm1.scale));
            out.push(vec1(format!("layer{li}.norm1.shift"), &mut layer.norm1.shift));
            out.push(vec1(format!("layer{li}.norm2.scale"), &mut layer.norm2.scale));
            out.push(vec1(format!("layer{li}.norm2.shift"), &mut layer.norm2.shift));
            out.push(mat(format!("layer{li}.ffb.w_a"), &mut layer.ffb.w_a));
            out.push(vec1(format!("layer{li}.ffb.b_a"), &mut layer.ffb.b_a));
            out.push(mat(format!("layer{li}.ffb.w_b"), &mut layer.ffb.w_b));
            out.push(vec1(format!("layer{li}.ffb.b_b"), &mut layer.ffb.b_b));
        }
        out.push(mat("classifier.weight".into(), &mut self.classifier.weight));
        out.push(vec1("classifier.bias".into(), &mut self.classifier.bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += other`, elementwise over every tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape == y.shape)
    }
}

/// Glorot-uniform bound for a `fan_in × fan_out` weight.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform(m: &mut Matrix, rng: &mut ChaCha8Rng) {
    let a = glorot_bound(m.rows(), m.cols());
    for v in m.as_mut_slice() {
        *v = rng.gen_range(-a..a);
    }
}

/// Glorot-uniform weights, unit norm scales, zero shifts and biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut p = ModelParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut p.layers {
        for head in &mut layer.heads {
            fill_uniform(&mut head.query, &mut rng);
            fill_uniform(&mut head.key, &mut rng);
            fill_uniform(&mut head.value, &mut rng);
        }
        fill_uniform(&mut layer.w_out, &mut rng);
        layer.norm1.scale.fill(1.0);
        layer.norm2.scale.fill(1.0);
        fill_uniform(&mut layer.ffb.w_a, &mut rng);
        fill_uniform(&mut layer.ffb.w_b, &mut rng);
    }
    fill_uniform(&mut p.classifier.weight, &mut rng);
    Ok(p)
}

/// Learnable-scalar breakdown for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// `3·heads·ℓ²`, no projection bias.
    pub projections: u64,
    /// `heads·ℓ·ℓ`.
    pub head_fusion: u64,
    /// Two norms of `2ℓ` each.
    pub norms: u64,
    /// `ℓ·h + h + h·ℓ + ℓ`.
    pub ffb: u64,
    pub per_layer: u64,
    /// `d·ℓ·C + C`.
    pub classifier: u64,
    pub total: u64,
}

pub fn count_params(config: &ModelConfig) -> ParamCount {
    let l = config.seq_len as u64;
    let h = config.ffb_hidden as u64;
    let heads = config.num_heads as u64;
    let c = config.num_classes as u64;
    let projections = 3 * heads * l * l;
    let head_fusion = heads * l * l;
    let norms = 2 * 2 * l;
    let ffb = l * h + h + h * l + l;
    let per_layer = projections + head_fusion + norms + ffb;
    let classifier = config.d as u64 * l * c + c;
    ParamCount {
        projections,
        head_fusion,
        norms,
        ffb,
        per_layer,
        classifier,
        total: config.num_layers as u64 * per_layer + classifier,
    }
}

/// Published reference sizes for the default architecture.
pub const REFERENCE_PER_LAYER: u64 = 9_258_742;
pub const REFERENCE_TOTAL: u64 = 74_087_228;

/// How far a configuration's counts sit from the reference sizes, and whether
/// any integer FFB width or class count could close the gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub count: ParamCount,
    pub per_layer_gap: i64,
    pub total_gap: i64,
    /// Reference per-layer count minus the FFB-independent part.
    pub ffb_budget: i64,
    /// `(ffb_budget − ℓ) / (2ℓ + 1)`, the FFB width that would match exactly.
    pub implied_ffb_hidden: f64,
    /// Reference total minus `layers × reference per-layer`.
    pub classifier_budget: i64,
    /// `classifier_budget / (d·ℓ + 1)`, the class count that would match exactly.
    pub implied_num_classes: f64,
}

impl Reconciliation {
    pub fn exact_ffb_width(&self) -> Option<u64> {
        let h = self.implied_ffb_hidden;
        (h >= 0.0 && h.fract() == 0.0).then_some(h as u64)
    }

    pub fn exact_class_count(&self) -> Option<u64> {
        let c = self.implied_num_classes;
        (c >= 0.0 && c.fract() == 0.0).then_some(c as u64)
    }
}

pub fn reconcile(config: &ModelConfig) -> Reconciliation {
    let count = count_params(config);
    let l = config.seq_len as i64;
    let fixed = (count.projections + count.head_fusion + count.norms) as i64;
    let ffb_budget = REFERENCE_PER_LAYER as i64 - fixed;
    let classifier_budget = REFERENCE_TOTAL as i64 - config.num_layers as i64 * REFERENCE_PER_LAYER as i64;
    Reconciliation {
        count,
        per_layer_gap: count.per_layer as i64 - REFERENCE_PER_LAYER as i64,
        total_gap: count.total as i64 - REFERENCE_TOTAL as i64,
        ffb_budget,
        implied_ffb_hidden: (ffb_budget - l) as f64 / (2 * l + 1) as f64,
        classifier_budget,
        implied_num_classes: classifier_budget as f64 / (config.d as i64 * l + 1) as f64,
    }
}
