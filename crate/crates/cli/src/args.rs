//! Command-line flags. Every flag is optional and, when given, overrides the
//! corresponding field of the configuration file (or its built-in default).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ldtf_core::config::RunConfig;
use ldtf_core::lde::{DftMethod, RowScheme, WaveletFamily};
use ldtf_core::preprocess::AamiClass;

#[derive(Debug, Parser)]
#[command(name = "ldtf", version, about = "Two-lead ECG beat classification: wavelet/Fourier embedding + transformer")]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for training and inference [default: 1, deterministic]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic two-lead records with annotated beats
    Synth(SynthArgs),
    /// Parse records, cut beat windows, split, oversample, standardise
    Ingest(IngestArgs),
    /// Compute the 18-row embedding of every archived segment
    Embed(EmbedArgs),
    /// Train the classifier; writes a checkpoint and a history CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes a JSON report and prints a table
    Eval(EvalArgs),
    /// Print the parameter breakdown of the configured model
    Params(ParamsArgs),
}

/// Comma-separated class list.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassList(pub Vec<AamiClass>);

/// Comma-separated list of levels; may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelList(pub Vec<usize>);

fn parse_classes(s: &str) -> Result<ClassList, String> {
    s.split(',')
        .map(|c| c.trim().parse::<AamiClass>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map(ClassList)
}

fn parse_levels(s: &str) -> Result<LevelList, String> {
    if s.trim().is_empty() {
        return Ok(LevelList(Vec::new()));
    }
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(LevelList)
}

fn parse_wavelet(s: &str) -> Result<WaveletFamily, String> {
    WaveletFamily::ALL
        .into_iter()
        .find(|w| w.name() == s)
        .ok_or_else(|| format!("unknown wavelet {s:?} (haar, db4, db6)"))
}

fn parse_row_scheme(s: &str) -> Result<RowScheme, String> {
    s.parse::<RowScheme>().map_err(|e| e.to_string())
}

fn parse_dft(s: &str) -> Result<DftMethod, String> {
    match s {
        "direct" => Ok(DftMethod::Direct),
        "bluestein" => Ok(DftMethod::Bluestein),
        _ => Err(format!("unknown DFT method {s:?} (direct, bluestein)")),
    }
}

#[derive(Debug, Args, Default)]
pub struct DataPaths {
    /// Directory of `.hea`/`.dat` record files [default: data/records]
    #[arg(long, value_name = "DIR")]
    pub records_dir: Option<PathBuf>,
    /// Directory of `<record>.csv` annotation files [default: data/annotations]
    #[arg(long, value_name = "DIR")]
    pub annotations_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct OutDir {
    /// Directory for artifacts whose path is not given explicitly [default: out]
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ClassArgs {
    /// Modelled classes in label order, comma separated [default: N,S,V,F,Q]
    #[arg(long, value_name = "LIST", value_parser = parse_classes)]
    pub classes: Option<ClassList>,
}

#[derive(Debug, Args, Default)]
pub struct PreprocessArgs {
    /// Per-class training share of the stratified split [default: 0.8, published reference]
    #[arg(long, value_name = "F")]
    pub train_fraction: Option<f64>,
    /// Nearest neighbours used by SMOTE [default: 5]
    #[arg(long, value_name = "K")]
    pub smote_k: Option<usize>,
    /// Seed of the train/test split [default: 0]
    #[arg(long, value_name = "SEED")]
    pub split_seed: Option<u64>,
    /// Seed of the oversampler [default: 0]
    #[arg(long, value_name = "SEED")]
    pub smote_seed: Option<u64>,
    /// Samples either side of the R peak [default: 120, i.e. 241-sample windows]
    #[arg(long, value_name = "N")]
    pub half_width: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct LdeArgs {
    /// Wavelet family: haar, db4, db6 [default: db4]
    #[arg(long, value_name = "NAME", value_parser = parse_wavelet)]
    pub wavelet: Option<WaveletFamily>,
    /// Detail levels removed before reconstruction, comma separated; empty keeps all [default: 1]
    #[arg(long, value_name = "LIST", value_parser = parse_levels)]
    pub drop_detail: Option<LevelList>,
    /// Wavelet rows per lead: as_printed (L1..L4, H4) or details (H1..H4, L4) [default: as_printed]
    #[arg(long, value_name = "NAME", value_parser = parse_row_scheme)]
    pub row_scheme: Option<RowScheme>,
    /// DFT algorithm: direct or bluestein [default: direct]
    #[arg(long, value_name = "NAME", value_parser = parse_dft)]
    pub dft: Option<DftMethod>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Encoder layers [default: 8]
    #[arg(long, value_name = "N")]
    pub layers: Option<usize>,
    /// Attention heads per layer [default: 6, published reference]
    #[arg(long, value_name = "N")]
    pub heads: Option<usize>,
    /// Feed-forward hidden width [default: 964 = 4·241]
    #[arg(long, value_name = "N")]
    pub ffb_hidden: Option<usize>,
    /// Dropout rate after attention and feed-forward blocks [default: 0.1, published reference]
    #[arg(long, value_name = "P")]
    pub dropout: Option<f64>,
    /// Seed of weight initialisation, shuffling and dropout [default: 0]
    #[arg(long, value_name = "SEED")]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub paths: DataPaths,
    /// Beat classes to generate, comma separated [default: N,S,V,F]
    #[arg(long, value_name = "LIST", value_parser = parse_classes)]
    pub classes: Option<ClassList>,
    /// Beats per class [default: 200]
    #[arg(long, value_name = "N", default_value_t = 200, hide_default_value = true)]
    pub beats_per_class: usize,
    /// Number of records the beats are spread over [default: 2]
    #[arg(long, value_name = "N", default_value_t = 2, hide_default_value = true)]
    pub num_records: usize,
    /// Noise standard deviation as a fraction of peak amplitude [default: 0.05]
    #[arg(long, value_name = "F", default_value_t = 0.05, hide_default_value = true)]
    pub noise_fraction: f64,
    /// Mean beat spacing in samples at 360 Hz [default: 300]
    #[arg(long, value_name = "N", default_value_t = 300, hide_default_value = true)]
    pub rr_interval: usize,
    /// Generator seed [default: 0]
    #[arg(long, value_name = "SEED", default_value_t = 0, hide_default_value = true)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub paths: DataPaths,
    #[command(flatten)]
    pub out: OutDir,
    /// Segment archive to write [default: <out-dir>/segments.seg]
    #[arg(long, value_name = "FILE")]
    pub segments: Option<PathBuf>,
    /// Manifest CSV to write [default: <out-dir>/manifest.csv]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub classes: ClassArgs,
    #[command(flatten)]
    pub preprocess: PreprocessArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Segment archive to read [default: <out-dir>/segments.seg]
    #[arg(long, value_name = "FILE")]
    pub segments: Option<PathBuf>,
    /// LDE1 embedding archive to write [default: <out-dir>/embeddings.lde]
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Also export the embeddings as CSV
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub lde: LdeArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// LDE1 embedding archive [default: <out-dir>/embeddings.lde]
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Manifest CSV with labels and split [default: <out-dir>/manifest.csv]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Checkpoint to write [default: <out-dir>/model.ldtf]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// History CSV to write [default: <out-dir>/history.csv]
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    /// Training epochs; 0 writes the initial parameters [default: 20]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// SGD learning rate [default: 0.001, published reference]
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    /// Minibatch size [default: 64, published reference]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    #[command(flatten)]
    pub classes: ClassArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Checkpoint to evaluate [default: <out-dir>/model.ldtf]
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// LDE1 embedding archive [default: <out-dir>/embeddings.lde]
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Manifest CSV with labels and split [default: <out-dir>/manifest.csv]
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Split to evaluate: train or test [default: test]
    #[arg(long, value_name = "NAME", default_value = "test", hide_default_value = true)]
    pub split: String,
    /// JSON report to write [default: <out-dir>/report.json]
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub classes: ClassArgs,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub classes: ClassArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataPaths {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.paths.records_dir, self.records_dir.clone());
        set(&mut c.paths.annotations_dir, self.annotations_dir.clone());
    }
}

impl OutDir {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.paths.output_dir, self.out_dir.clone());
    }
}

impl ClassArgs {
    /// Also keeps the model's class count in step with the class list.
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(classes) = &self.classes {
            c.preprocess.classes = classes.0.clone();
            c.model.num_classes = classes.0.len();
        }
    }
}

impl PreprocessArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let p = &mut c.preprocess;
        set(&mut p.train_fraction, self.train_fraction);
        set(&mut p.smote_k, self.smote_k);
        set(&mut p.split_seed, self.split_seed);
        set(&mut p.smote_seed, self.smote_seed);
        if let Some(h) = self.half_width {
            p.half_width = h;
            c.model.seq_len = 2 * h + 1;
        }
    }
}

impl LdeArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.lde.wavelet, self.wavelet);
        set(&mut c.lde.row_scheme, self.row_scheme);
        set(&mut c.lde.dft_method, self.dft);
        if let Some(levels) = &self.drop_detail {
            c.lde.drop_detail_levels = levels.0.iter().copied().collect();
        }
    }
}

impl ModelArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let m = &mut c.model;
        set(&mut m.num_layers, self.layers);
        set(&mut m.num_heads, self.heads);
        set(&mut m.ffb_hidden, self.ffb_hidden);
        set(&mut m.dropout, self.dropout);
        set(&mut m.seed, self.model_seed);
    }
}
