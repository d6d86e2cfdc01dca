use super::*;
use crate::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d: 3,
        seq_len: 5,
        num_heads: 2,
        num_layers: 2,
        ffb_hidden: 7,
        num_classes: 4,
        dropout: 0.0,
        seed: 11,
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn init_is_deterministic_and_bounded() {
    let cfg = tiny_config();
    let a = init_params(&cfg, 5).unwrap();
    assert_eq!(a, init_params(&cfg, 5).unwrap());
    assert_ne!(a, init_params(&cfg, 6).unwrap());
    for t in a.tensors() {
        if t.shape.len() == 2 {
            let bound = glorot_bound(t.shape[0], t.shape[1]);
            assert!(t.data.iter().all(|w| w.abs() < bound), "{}", t.name);
        }
    }
    let l0 = &a.layers[0];
    assert!(l0.norm1.scale.iter().all(|v| *v == 1.0) && l0.norm1.shift.iter().all(|v| *v == 0.0));
    assert!(l0.ffb.b_a.iter().all(|v| *v == 0.0) && a.classifier.bias.iter().all(|v| *v == 0.0));
}

#[test]
fn default_projection_shape() {
    let cfg = ModelConfig {
        num_layers: 1,
        ..ModelConfig::default()
    };
    let p = ModelParams::zeros(&cfg);
    assert_eq!(p.layers[0].heads[0].query.shape(), (241, 241));
    assert_eq!(p.layers[0].w_out.shape(), (6 * 241, 241));
    assert_eq!(p.classifier.weight.shape(), (18 * 241, 5));
}

#[test]
fn invalid_configs() {
    let mut cfg = tiny_config();
    cfg.dropout = 1.0;
    assert!(matches!(init_params(&cfg, 0), Err(ModelError::InvalidConfig(_))));
    let mut cfg = tiny_config();
    cfg.num_classes = 1;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_config();
    cfg.num_heads = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn attention_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<Matrix> = (0..3).map(|_| random_matrix(5, 5, &mut rng)).collect();
    let y = Matrix::zeros(3, 5);
    let out = attention_head(&y, &w[0], &w[1], &w[2]).unwrap();
    assert!(out.as_slice().iter().all(|v| *v == 0.0));
    let p = attention_weights(&y, &w[0], &w[1], &w[2]).unwrap();
    assert!(p.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn attention_single_row_is_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w: Vec<Matrix> = (0..3).map(|_| random_matrix(4, 4, &mut rng)).collect();
    let y = random_matrix(1, 4, &mut rng);
    let out = attention_head(&y, &w[0], &w[1], &w[2]).unwrap();
    assert!(out.max_abs_diff(&y.matmul(&w[2])) < 1e-15);
}

#[test]
fn attention_shape_mismatch() {
    let y = Matrix::zeros(3, 5);
    let w = Matrix::zeros(5, 5);
    let bad = Matrix::zeros(4, 5);
    assert!(matches!(attention_head(&y, &w, &bad, &w), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn mab_selector_returns_first_head() {
    let cfg = tiny_config();
    let mut p = init_params(&cfg, 3).unwrap();
    let l = cfg.seq_len;
    let mut sel = Matrix::zeros(cfg.num_heads * l, l);
    for i in 0..l {
        sel[(i, i)] = 1.0;
    }
    p.layers[0].w_out = sel;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = random_matrix(cfg.d, l, &mut rng);
    let h = &p.layers[0].heads[0];
    let h1 = attention_head(&y, &h.query, &h.key, &h.value).unwrap();
    let m = mab_forward(&y, &p.layers[0]).unwrap();
    assert!(m.max_abs_diff(&h1) < 1e-15);

    p.layers[0].w_out = Matrix::zeros(cfg.num_heads * l, l);
    assert!(mab_forward(&y, &p.layers[0]).unwrap().as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn encoder_layer_norm_and_dropout_gating() {
    let mut cfg = tiny_config();
    cfg.dropout = 0.5;
    let p = init_params(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = random_matrix(cfg.d, cfg.seq_len, &mut rng);
    let a = encoder_layer_forward(&y, &p.layers[0], cfg.dropout, false, &mut rng).unwrap();
    let b = encoder_layer_forward(&y, &p.layers[0], cfg.dropout, false, &mut rng).unwrap();
    assert_eq!(a, b);
    // scale 1, shift 0 → every row standardised
    for r in 0..a.rows() {
        let row = a.row(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
    let c = encoder_layer_forward(&y, &p.layers[0], cfg.dropout, true, &mut rng).unwrap();
    assert_ne!(a, c);
}

#[test]
fn model_output_is_a_distribution() {
    let cfg = tiny_config();
    let p = init_params(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(cfg.d, cfg.seq_len, &mut rng);
    let (probs, trace) = model_forward_traced(&x, &p, false, &mut rng).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(probs.iter().all(|v| *v > 0.0 && *v < 1.0));
    let (err, min) = trace.row_stochastic_error();
    assert!(err < 1e-6 && min >= 0.0);
    assert_eq!(trace.attention.len(), 2);
    assert_eq!(trace.attention[0].len(), 2);
}

#[test]
fn zero_classifier_is_uniform() {
    let cfg = tiny_config();
    let mut p = init_params(&cfg, 1).unwrap();
    p.classifier.weight = Matrix::zeros(cfg.d * cfg.seq_len, cfg.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_matrix(cfg.d, cfg.seq_len, &mut rng);
    let probs = model_forward(&x, &p, false, &mut rng).unwrap();
    assert!(probs.iter().all(|v| (v - 0.25).abs() < 1e-15));
    let out = loss_and_grads(&[(&x, 2)], &p, &mut rng).unwrap();
    assert!((out.loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn non_finite_input_is_reported() {
    let cfg = tiny_config();
    let p = init_params(&cfg, 1).unwrap();
    let mut x = Matrix::zeros(cfg.d, cfg.seq_len);
    x[(0, 0)] = f64::NAN;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(
        model_forward(&x, &p, false, &mut rng),
        Err(ModelError::NonFiniteActivation { layer: 0 })
    );
}

#[test]
fn duplicated_batch_is_invariant() {
    let cfg = tiny_config();
    let p = init_params(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(cfg.d, cfg.seq_len, &mut rng)).collect();
    let batch: Vec<(&Matrix, usize)> = xs.iter().zip([0, 3, 1]).map(|(x, y)| (x, y)).collect();
    let doubled: Vec<(&Matrix, usize)> = batch.iter().flat_map(|b| [*b, *b]).collect();
    let a = loss_and_grads(&batch, &p, &mut rng).unwrap();
    let b = loss_and_grads(&doubled, &p, &mut rng).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12);
    for (ga, gb) in a.grads.tensors().iter().zip(b.grads.tensors()) {
        assert!(crate::linalg::max_abs_diff(ga.data, gb.data) < 1e-12, "{}", ga.name);
    }
}

#[test]
fn parallel_chunks_match_sequential() {
    let mut cfg = tiny_config();
    cfg.dropout = 0.2;
    let p = init_params(&cfg, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let xs: Vec<Matrix> = (0..40).map(|_| random_matrix(cfg.d, cfg.seq_len, &mut rng)).collect();
    let batch: Vec<(&Matrix, usize)> = xs.iter().enumerate().map(|(i, x)| (x, i % 4)).collect();
    let seq = loss_and_grads_with(&batch, &p, &mut ChaCha8Rng::seed_from_u64(1), &Parallelism::default()).unwrap();
    let par = loss_and_grads_with(&batch, &p, &mut ChaCha8Rng::seed_from_u64(1), &Parallelism::threads(3).unwrap()).unwrap();
    assert_eq!(seq.loss, par.loss);
    assert_eq!(seq.grads, par.grads);
}

#[test]
fn loss_and_grads_errors() {
    let cfg = tiny_config();
    let p = init_params(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(loss_and_grads(&[], &p, &mut rng).unwrap_err(), ModelError::EmptyBatch);
    let x = Matrix::zeros(cfg.d, cfg.seq_len);
    assert!(matches!(
        loss_and_grads(&[(&x, 4)], &p, &mut rng),
        Err(ModelError::LabelOutOfRange { label: 4, .. })
    ));
    let wrong = Matrix::zeros(cfg.d + 1, cfg.seq_len);
    assert!(matches!(loss_and_grads(&[(&wrong, 0)], &p, &mut rng), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn sgd_arithmetic() {
    let cfg = tiny_config();
    let p0 = init_params(&cfg, 1).unwrap();
    let zeros = ModelParams::zeros(&cfg);
    let mut p = p0.clone();
    sgd_step(&mut p, &zeros, 0.5).unwrap();
    assert_eq!(p, p0);
    let mut g = p0.clone();
    g.scale(3.0);
    sgd_step(&mut p, &g, 0.0).unwrap();
    assert_eq!(p, p0);

    let mut p = ModelParams::zeros(&cfg);
    p.classifier.bias[0] = 1.0;
    let mut g = ModelParams::zeros(&cfg);
    g.classifier.bias[0] = 2.0;
    sgd_step(&mut p, &g, 0.001).unwrap();
    assert!((p.classifier.bias[0] - 0.998).abs() < 1e-15);

    let other = ModelParams::zeros(&ModelConfig { ffb_hidden: 3, ..cfg });
    assert!(sgd_step(&mut p, &other, 0.1).is_err());
}

#[test]
fn count_params_arithmetic() {
    let cfg = ModelConfig::default();
    let c = count_params(&cfg);
    assert_eq!(c.projections, 1_045_458);
    assert_eq!(c.head_fusion, 348_486);
    assert_eq!(c.norms, 964);
    assert_eq!(c.ffb, 241 * 964 + 964 + 964 * 241 + 241);
    assert_eq!(c.total, 8 * c.per_layer + c.classifier);
    assert_eq!(c.classifier, 18 * 241 * 5 + 5);

    let tiny = tiny_config();
    assert_eq!(count_params(&tiny).total as usize, init_params(&tiny, 0).unwrap().num_scalars());
}

#[test]
fn reconciliation_gap() {
    let r = reconcile(&ModelConfig::default());
    assert_eq!(r.ffb_budget, 7_863_834);
    assert_eq!(r.classifier_budget, 17_292);
    assert_eq!(r.exact_ffb_width(), None);
    assert_eq!(r.exact_class_count(), None);
    assert_eq!(r.per_layer_gap, count_params(&ModelConfig::default()).per_layer as i64 - 9_258_742);
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_init() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let data: Vec<(Matrix, usize)> = (0..20)
        .map(|i| (random_matrix(cfg.d, cfg.seq_len, &mut rng), i % 4))
        .collect();
    let zero = TrainOptions {
        epochs: 0,
        ..TrainOptions::default()
    };
    let (p, h) = train(&data, &cfg, &zero, None).unwrap();
    assert_eq!(p, init_params(&cfg, cfg.seed).unwrap());
    assert!(h.epochs.is_empty());

    let opts = TrainOptions {
        epochs: 3,
        batch_size: 6,
        learning_rate: 0.05,
        ..TrainOptions::default()
    };
    let (p1, h1) = train(&data, &cfg, &opts, Some(&data)).unwrap();
    let (p2, h2) = train(&data, &cfg, &opts, Some(&data)).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert_eq!(h1.epochs.len(), 3);
    assert!(h1.epochs.iter().all(|e| e.loss.is_finite() && e.loss >= 0.0));
    let csv = h1.to_csv();
    assert!(csv.starts_with("epoch,loss,accuracy,val_recall_macro,val_precision_macro\n"));
    assert_eq!(csv.lines().count(), 4);
}
