//! End-to-end stages behind the command-line tool: synthesise records,
//! ingest them into a segment archive, embed, train and evaluate. Each stage
//! reads and writes files so it can be run on its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::eval::{confusion_matrix, recall_precision, EvalError, EvalReport};
use crate::formats::{
    manifest_to_csv, parse_manifest, ArchivedSegment, Checkpoint, EmbeddingArchive, FormatError, ManifestRow,
    SegmentArchive, SplitTag,
};
use crate::ingest::{read_record, synth_record, write_record, IngestError, SynthSpec, MITBIH_RATE_HZ, PIPELINE_CHANNELS};
use crate::lde::{embed, LdeError, ROWS_PER_CHANNEL};
use crate::linalg::Matrix;
use crate::preprocess::{smote, split_train_test, zscore, AamiClass, Dataset, PreprocessError};
use crate::transformer::{
    count_params, evaluate_loss, init_params, predict, reconcile, train_from, ModelError, ModelParams, Parallelism,
    TrainHistory, TrainOptions, REFERENCE_PER_LAYER, REFERENCE_TOTAL,
};

/// Failure of a pipeline stage, classified for the process exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, missing or malformed input data.
    #[error("{0}")]
    Data(String),
    /// Non-finite loss or activation.
    #[error("{0}")]
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Usage(e.to_string())
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<PreprocessError> for PipelineError {
    fn from(e: PreprocessError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<LdeError> for PipelineError {
    fn from(e: LdeError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteActivation { .. } | ModelError::NonFiniteLoss => PipelineError::Numeric(e.to_string()),
            ModelError::InvalidConfig(_) => PipelineError::Usage(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

fn format_err(path: &Path) -> impl Fn(FormatError) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn parallelism(config: &RunConfig) -> Result<Parallelism, PipelineError> {
    Ok(Parallelism::threads(config.threads)?)
}

/// Default artifact locations inside an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub segments: PathBuf,
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            segments: dir.join("segments.seg"),
            manifest: dir.join("manifest.csv"),
            embeddings: dir.join("embeddings.lde"),
            checkpoint: dir.join("model.ldtf"),
            history: dir.join("history.csv"),
            report: dir.join("report.json"),
        }
    }
}

// ---------------------------------------------------------------- synth

/// Synthetic corpus layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub classes: Vec<AamiClass>,
    pub beats_per_class: usize,
    pub num_records: usize,
    /// Noise standard deviation as a fraction of the record's peak amplitude.
    pub noise_fraction: f64,
    /// Mean spacing between beats, samples.
    pub rr_interval: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            classes: vec![AamiClass::N, AamiClass::S, AamiClass::V, AamiClass::F],
            beats_per_class: 200,
            num_records: 2,
            noise_fraction: 0.05,
            rr_interval: 300,
            seed: 0,
        }
    }
}

/// Representative annotation symbol written for each class.
pub fn canonical_symbol(class: AamiClass) -> char {
    match class {
        AamiClass::N => 'N',
        AamiClass::S => 'A',
        AamiClass::V => 'V',
        AamiClass::F => 'F',
        AamiClass::Q => '/',
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub records: Vec<String>,
    pub beats: usize,
    pub noise_std: Vec<f64>,
}

/// Writes `num_records` synthetic records whose beats, in a seeded random
/// order, cover every class `beats_per_class` times in total.
pub fn run_synth(options: &SynthOptions, records_dir: &Path, annotations_dir: &Path) -> Result<SynthSummary, PipelineError> {
    let o = options;
    if o.classes.is_empty() || o.beats_per_class == 0 || o.num_records == 0 {
        return Err(PipelineError::Usage("need at least one class, beat and record".into()));
    }
    if !(o.noise_fraction.is_finite() && o.noise_fraction >= 0.0) {
        return Err(PipelineError::Usage(format!("noise fraction {} must be non-negative", o.noise_fraction)));
    }
    // jitter stays well inside the window spacing
    let jitter = o.rr_interval / 20;
    if o.rr_interval < 2 * crate::ingest::DEFAULT_HALF_WIDTH + 1 + 2 * jitter {
        return Err(PipelineError::Usage(format!("rr interval {} is too short", o.rr_interval)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let mut symbols: Vec<char> = o
        .classes
        .iter()
        .flat_map(|&c| std::iter::repeat(canonical_symbol(c)).take(o.beats_per_class))
        .collect();
    symbols.shuffle(&mut rng);

    let per_record = symbols.len().div_ceil(o.num_records);
    let mut summary = SynthSummary {
        records: Vec::new(),
        beats: symbols.len(),
        noise_std: Vec::new(),
    };
    for (r, chunk) in symbols.chunks(per_record).enumerate() {
        let indices: Vec<usize> = (0..chunk.len())
            .map(|i| (i + 1) * o.rr_interval + rng.gen_range(0..=2 * jitter) - jitter)
            .collect();
        let mut spec = SynthSpec {
            record_name: format!("syn{:03}", r + 1),
            num_samples: (chunk.len() + 1) * o.rr_interval,
            rate_hz: MITBIH_RATE_HZ,
            beat_indices: indices,
            beat_symbols: chunk.to_vec(),
            noise_std: 0.0,
        };
        let record_seed = rng.gen();
        let clean = synth_record(&spec, record_seed)?;
        let peak = clean.samples.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        spec.noise_std = o.noise_fraction * peak;
        let record = synth_record(&spec, record_seed)?;
        write_record(&record, records_dir, annotations_dir)?;
        summary.noise_std.push(spec.noise_std);
        summary.records.push(spec.record_name);
    }
    Ok(summary)
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestSummary {
    pub records: usize,
    /// Extracted beats per class, before splitting.
    pub extracted: BTreeMap<AamiClass, usize>,
    pub train_before_smote: BTreeMap<AamiClass, usize>,
    pub train_after_smote: BTreeMap<AamiClass, usize>,
    pub test: BTreeMap<AamiClass, usize>,
    pub skipped_edge: usize,
    pub skipped_symbol: usize,
    /// Beats of classes that are not modelled.
    pub skipped_class: usize,
    pub segments_written: usize,
}

impl IngestSummary {
    /// One line per class in N, S, V, F, Q order.
    pub fn table(&self) -> String {
        let mut s = format!("{:<6}{:>10}{:>10}{:>12}{:>8}\n", "class", "beats", "train", "train+smote", "test");
        for c in AamiClass::ALL {
            let get = |m: &BTreeMap<AamiClass, usize>| m.get(&c).copied().unwrap_or(0);
            s.push_str(&format!(
                "{:<6}{:>10}{:>10}{:>12}{:>8}\n",
                c.as_str(),
                get(&self.extracted),
                get(&self.train_before_smote),
                get(&self.train_after_smote),
                get(&self.test)
            ));
        }
        s.push_str(&format!(
            "skipped: {} at record edges, {} non-beat symbols, {} unmodelled classes\n",
            self.skipped_edge, self.skipped_symbol, self.skipped_class
        ));
        s
    }
}

/// Names of all records (`*.hea`) in `dir`, sorted.
pub fn list_records(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::Data(format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PipelineError::Data(format!("{}: {e}", dir.display())))?.path();
        if path.extension().is_some_and(|x| x == "hea") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                names.push(stem.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Reads every record, extracts labelled windows, splits them per class,
/// oversamples the training part, standardises every segment and writes the
/// segment archive plus its manifest. Training rows precede test rows.
pub fn run_ingest(config: &RunConfig, segments_out: &Path, manifest_out: &Path) -> Result<IngestSummary, PipelineError> {
    config.validate()?;
    let p = &config.preprocess;
    let names = list_records(&config.paths.records_dir)?;
    let mut summary = IngestSummary {
        records: names.len(),
        ..Default::default()
    };
    let mut segments = Vec::new();
    for name in &names {
        let record = read_record(&config.paths.records_dir, &config.paths.annotations_dir, name)?;
        let ex = crate::ingest::extract_segments(&record, p.half_width);
        summary.skipped_edge += ex.skipped_edge;
        summary.skipped_symbol += ex.skipped_symbol;
        for s in ex.segments {
            if config.label_of(s.label).is_some() {
                segments.push(s);
            } else {
                summary.skipped_class += 1;
            }
        }
    }
    let dataset = Dataset::new(segments);
    summary.extracted = dataset.class_counts();

    let mut entries = Vec::new();
    if dataset.is_empty() {
        log::warn!("no segments extracted; writing an empty archive");
    } else {
        let split = split_train_test(&dataset, p.train_fraction, p.split_seed, &p.classes)?;
        summary.train_before_smote = split.train.class_counts();
        let train = if split.train.is_empty() {
            split.train
        } else {
            smote(&split.train, p.smote_k, p.smote_seed)?.dataset
        };
        summary.train_after_smote = train.class_counts();
        summary.test = split.test.class_counts();
        for (set, tag) in [(&train, SplitTag::Train), (&split.test, SplitTag::Test)] {
            entries.extend(set.segments.iter().map(|s| ArchivedSegment {
                segment: zscore(s),
                split: tag,
            }));
        }
    }
    summary.segments_written = entries.len();
    let archive = SegmentArchive {
        split_seed: p.split_seed,
        smote_seed: p.smote_seed,
        channels: PIPELINE_CHANNELS,
        len: 2 * p.half_width + 1,
        entries,
    };
    write_file(segments_out, archive.encode().map_err(format_err(segments_out))?)?;
    write_file(manifest_out, manifest_to_csv(&archive.manifest()))?;
    Ok(summary)
}

// ---------------------------------------------------------------- embed

/// Embeds every archived segment, preserving archive (manifest) order.
pub fn run_embed(config: &RunConfig, segments_in: &Path, out: &Path, csv_out: Option<&Path>) -> Result<usize, PipelineError> {
    config.validate()?;
    let archive = SegmentArchive::decode(&read_file(segments_in)?).map_err(format_err(segments_in))?;
    let rows = archive.channels * ROWS_PER_CHANNEL;
    if archive.channels != PIPELINE_CHANNELS || rows != config.model.d || archive.len != config.model.seq_len {
        return Err(PipelineError::Data(format!(
            "{}: segments are {}×{}, the model expects {}×{} embeddings from {} leads",
            segments_in.display(),
            archive.channels,
            archive.len,
            config.model.d,
            config.model.seq_len,
            PIPELINE_CHANNELS
        )));
    }
    let matrices = archive
        .entries
        .iter()
        .map(|e| embed(&e.segment.data, &config.lde).map(|m| m.matrix))
        .collect::<Result<Vec<_>, _>>()?;
    let lde = EmbeddingArchive {
        rows,
        cols: archive.len,
        matrices,
    };
    write_file(out, lde.encode().map_err(format_err(out))?)?;
    if let Some(path) = csv_out {
        write_file(path, lde.to_csv())?;
    }
    Ok(lde.matrices.len())
}

// ---------------------------------------------------------------- train / eval

/// Embeddings paired with labels, split by the manifest's split column.
#[derive(Debug, Clone, Default)]
pub struct LabelledSets {
    pub train: Vec<(Matrix, usize)>,
    pub test: Vec<(Matrix, usize)>,
}

pub fn load_labelled(config: &RunConfig, embeddings: &Path, manifest: &Path) -> Result<LabelledSets, PipelineError> {
    let lde = EmbeddingArchive::decode(&read_file(embeddings)?).map_err(format_err(embeddings))?;
    let text = String::from_utf8(read_file(manifest)?)
        .map_err(|_| PipelineError::Data(format!("{}: not UTF-8", manifest.display())))?;
    let rows: Vec<ManifestRow> = parse_manifest(&text).map_err(format_err(manifest))?;
    if rows.len() != lde.matrices.len() {
        return Err(PipelineError::Data(format!(
            "{} has {} rows but {} holds {} embeddings",
            manifest.display(),
            rows.len(),
            embeddings.display(),
            lde.matrices.len()
        )));
    }
    if !lde.matrices.is_empty() && (lde.rows, lde.cols) != (config.model.d, config.model.seq_len) {
        return Err(PipelineError::Data(format!(
            "{}: embeddings are {}×{}, the model expects {}×{}",
            embeddings.display(),
            lde.rows,
            lde.cols,
            config.model.d,
            config.model.seq_len
        )));
    }
    let mut sets = LabelledSets::default();
    for (m, row) in lde.matrices.into_iter().zip(rows) {
        let label = config.label_of(row.aami_class).ok_or_else(|| {
            PipelineError::Data(format!("class {} is in the manifest but not modelled", row.aami_class))
        })?;
        match row.split {
            SplitTag::Train => sets.train.push((m, label)),
            SplitTag::Test => sets.test.push((m, label)),
        }
    }
    Ok(sets)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Eval-mode mean loss of the initial parameters on the training set.
    pub initial_loss: f64,
    /// Eval-mode mean loss of the trained parameters on the training set.
    pub final_loss: f64,
    pub history: TrainHistory,
    pub params: ModelParams,
}

/// Trains from the configured initialisation and writes the checkpoint and
/// the per-epoch history. Held-out rows, when present, only feed the
/// validation columns of the history.
pub fn run_train(
    config: &RunConfig,
    embeddings: &Path,
    manifest: &Path,
    checkpoint_out: &Path,
    history_out: &Path,
) -> Result<TrainSummary, PipelineError> {
    config.validate()?;
    let sets = load_labelled(config, embeddings, manifest)?;
    if sets.train.is_empty() && config.train.epochs > 0 {
        return Err(PipelineError::Data(format!("{}: no training rows", manifest.display())));
    }
    let par = parallelism(config)?;
    let init = init_params(&config.model, config.model.seed)?;
    let initial_loss = if sets.train.is_empty() {
        f64::NAN
    } else {
        evaluate_loss(&init, &sets.train, &par)?
    };
    let options = TrainOptions {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        learning_rate: config.train.learning_rate,
        parallelism: par.clone(),
    };
    let validation = (!sets.test.is_empty()).then_some(sets.test.as_slice());
    let (params, history) = train_from(init, &sets.train, &options, validation)?;
    let final_loss = if sets.train.is_empty() {
        f64::NAN
    } else {
        evaluate_loss(&params, &sets.train, &par)?
    };
    let checkpoint = Checkpoint {
        params,
        split_seed: config.preprocess.split_seed,
        smote_seed: config.preprocess.smote_seed,
    };
    write_file(checkpoint_out, checkpoint.encode())?;
    write_file(history_out, history.to_csv())?;
    Ok(TrainSummary {
        initial_loss,
        final_loss,
        history,
        params: checkpoint.params,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    Checkpoint::decode(&read_file(path)?).map_err(format_err(path))
}

/// Report JSON: the evaluation report plus the class order and the seeds
/// behind the checkpoint.
pub fn report_json(report: &EvalReport, classes: &[AamiClass], checkpoint: &Checkpoint) -> String {
    let mut v = serde_json::to_value(report).expect("report serialises");
    let obj = v.as_object_mut().expect("report is an object");
    obj.insert("classes".into(), serde_json::to_value(classes).expect("classes serialise"));
    obj.insert(
        "seeds".into(),
        serde_json::json!({
            "split": checkpoint.split_seed,
            "smote": checkpoint.smote_seed,
            "model": checkpoint.params.config.seed,
        }),
    );
    let mut s = serde_json::to_string_pretty(&v).expect("report serialises");
    s.push('\n');
    s
}

/// Evaluates a checkpoint on one split and writes the JSON report.
pub fn run_eval(
    config: &RunConfig,
    checkpoint_in: &Path,
    embeddings: &Path,
    manifest: &Path,
    split: SplitTag,
    report_out: &Path,
) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let checkpoint = load_checkpoint(checkpoint_in)?;
    let params = &checkpoint.params;
    if params.config.num_classes != config.preprocess.classes.len() {
        return Err(PipelineError::Usage(format!(
            "checkpoint models {} classes, configuration lists {}",
            params.config.num_classes,
            config.preprocess.classes.len()
        )));
    }
    let sets = load_labelled(config, embeddings, manifest)?;
    let data = match split {
        SplitTag::Train => sets.train,
        SplitTag::Test => sets.test,
    };
    let inputs: Vec<&Matrix> = data.iter().map(|(x, _)| x).collect();
    let preds = predict(params, &inputs, &parallelism(config)?)?;
    let labels: Vec<usize> = data.iter().map(|(_, y)| *y).collect();
    let report = recall_precision(&confusion_matrix(&preds, &labels, params.config.num_classes)?)?;
    write_file(report_out, report_json(&report, &config.preprocess.classes, &checkpoint))?;
    Ok(report)
}

// ---------------------------------------------------------------- params

/// Parameter breakdown of the configured model beside the published
/// reference figures.
pub fn params_report(config: &RunConfig) -> String {
    let c = count_params(&config.model);
    let r = reconcile(&config.model);
    let m = &config.model;
    let mut s = String::new();
    s.push_str(&format!(
        "model: d={} seq_len={} heads={} layers={} ffb_hidden={} classes={}\n",
        m.d, m.seq_len, m.num_heads, m.num_layers, m.ffb_hidden, m.num_classes
    ));
    s.push_str(&format!("{:<28}{:>14}\n", "attention projections", c.projections));
    s.push_str(&format!("{:<28}{:>14}\n", "head fusion", c.head_fusion));
    s.push_str(&format!("{:<28}{:>14}\n", "layer norms", c.norms));
    s.push_str(&format!("{:<28}{:>14}\n", "feed-forward block", c.ffb));
    s.push_str(&format!("{:<28}{:>14}{:>16}{:>14}\n", "", "computed", "published ref", "gap"));
    s.push_str(&format!(
        "{:<28}{:>14}{:>16}{:>14}\n",
        "per layer", c.per_layer, REFERENCE_PER_LAYER, r.per_layer_gap
    ));
    s.push_str(&format!("{:<28}{:>14}\n", "classifier", c.classifier));
    s.push_str(&format!("{:<28}{:>14}{:>16}{:>14}\n", "total", c.total, REFERENCE_TOTAL, r.total_gap));
    s.push_str(&format!(
        "reconciliation: the reference per-layer figure leaves {} parameters for the feed-forward block \
         (implied hidden width {:.4}); the reference total leaves {} for the classifier (implied classes {:.4})\n",
        r.ffb_budget, r.implied_ffb_hidden, r.classifier_budget, r.implied_num_classes
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Usage(String::new()).exit_code(), 1);
        assert_eq!(PipelineError::Data(String::new()).exit_code(), 2);
        assert_eq!(PipelineError::Numeric(String::new()).exit_code(), 3);
        assert_eq!(PipelineError::from(ModelError::NonFiniteLoss).exit_code(), 3);
        assert_eq!(PipelineError::from(ModelError::NonFiniteActivation { layer: 1 }).exit_code(), 3);
        assert_eq!(PipelineError::from(ModelError::InvalidConfig(String::new())).exit_code(), 1);
        assert_eq!(PipelineError::from(IngestError::UnsupportedFormat(16)).exit_code(), 2);
    }

    #[test]
    fn params_report_lists_reference_figures() {
        let text = params_report(&RunConfig::default());
        assert!(text.contains("9258742"));
        assert!(text.contains("74087228"));
        assert!(text.contains("1045458"));
    }

    #[test]
    fn canonical_symbols_map_back() {
        for c in AamiClass::ALL {
            assert_eq!(crate::preprocess::map_symbol_to_aami(canonical_symbol(c)).unwrap(), c);
        }
    }
}
