//! Run configuration: one TOML file describing paths, preprocessing, the
//! embedding, the model and training. Every field has a default, so an empty
//! file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::Seeds;
use crate::ingest::DEFAULT_HALF_WIDTH;
use crate::lde::LdeConfig;
use crate::preprocess::AamiClass;
use crate::transformer::{ModelConfig, BATCH_SIZE, LEARNING_RATE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub records_dir: PathBuf,
    pub annotations_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            records_dir: PathBuf::from("data/records"),
            annotations_dir: PathBuf::from("data/annotations"),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Per-class share of segments assigned to training.
    pub train_fraction: f64,
    /// Neighbours considered when synthesising a minority sample.
    pub smote_k: usize,
    pub split_seed: u64,
    pub smote_seed: u64,
    /// Samples either side of the R peak.
    pub half_width: usize,
    /// Classes that are modelled, in label order. Beats of other classes are
    /// dropped at ingestion.
    pub classes: Vec<AamiClass>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            smote_k: 5,
            split_seed: 0,
            smote_seed: 0,
            half_width: DEFAULT_HALF_WIDTH,
            classes: AamiClass::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: LEARNING_RATE,
            batch_size: BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for training and inference; 1 keeps runs bit-reproducible
    /// without relying on the fixed-order reduction.
    pub threads: usize,
    pub paths: PathsConfig,
    pub preprocess: PreprocessConfig,
    pub lde: LdeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            paths: PathsConfig::default(),
            preprocess: PreprocessConfig::default(),
            lde: LdeConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let config = Self::from_toml(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            split: self.preprocess.split_seed,
            smote: self.preprocess.smote_seed,
            model: self.model.seed,
        }
    }

    /// Checks value ranges and cross-field consistency. Path existence is
    /// checked by each command for the paths it reads.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let p = &self.preprocess;
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) {
            return invalid(format!("train_fraction {} must lie in (0, 1)", p.train_fraction));
        }
        if p.smote_k == 0 {
            return invalid("smote_k must be at least 1".into());
        }
        if p.half_width == 0 {
            return invalid("half_width must be positive".into());
        }
        if p.classes.len() < 2 {
            return invalid("at least two classes are required".into());
        }
        let mut sorted = p.classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != p.classes.len() {
            return invalid("classes must not repeat".into());
        }
        if self.model.num_classes != p.classes.len() {
            return invalid(format!(
                "model.num_classes = {} but {} classes are listed",
                self.model.num_classes,
                p.classes.len()
            ));
        }
        if self.model.seq_len != 2 * p.half_width + 1 {
            return invalid(format!(
                "model.seq_len = {} but segments are {} samples long",
                self.model.seq_len,
                2 * p.half_width + 1
            ));
        }
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.lde.drop_detail_levels.iter().any(|&l| l == 0 || l > crate::lde::DEFAULT_LEVELS) {
            return invalid(format!(
                "drop_detail_levels must lie in 1..={}",
                crate::lde::DEFAULT_LEVELS
            ));
        }
        if self.train.batch_size == 0 {
            return invalid("batch_size must be positive".into());
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate >= 0.0) {
            return invalid(format!("learning_rate {} must be finite and non-negative", self.train.learning_rate));
        }
        if self.threads == 0 {
            return invalid("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Label index of `class`, if it is modelled.
    pub fn label_of(&self, class: AamiClass) -> Option<usize> {
        self.preprocess.classes.iter().position(|&c| c == class)
    }
}
