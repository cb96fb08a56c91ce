//! Fine-tuning orchestration: the six training configurations, training-record
//! serialization, run manifests, and the trainer boundary.

mod manifest;
mod trainer;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use manifest::{launch, read_manifest, write_manifest, RunManifest, RunStatus, TrainMetrics, MANIFEST_VERSION};
pub use trainer::{CommandTrainer, MockTrainer, TrainResult, Trainer};

use crate::corpus::{compose_mix, CorpusError, DatasetView, Language, MixSpec};
use crate::grading::{grading_user_content, GradingMode, PROMPT_TEMPLATE_ID, SYSTEM_PROMPT};
use crate::util::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("no training view for `{0}`")]
    MissingTrainView(Language),
    #[error("training size {0} must be a positive multiple of 3")]
    BadTrainSize(usize),
    #[error("invalid config `{name}`: {reason}")]
    InvalidConfig { name: String, reason: String },
    #[error("manifest version `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { found: String, expected: String },
    #[error("dataset {path} hash {actual} does not match manifest {expected}")]
    HashMismatch { path: String, expected: String, actual: String },
    #[error("manifest {0} is locked by another launch")]
    Locked(String),
    #[error("manifest {path}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition { path: String, from: RunStatus, to: RunStatus },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> FinetuneError {
    FinetuneError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub rank: u32,
    pub alpha: u32,
    pub dropout: f64,
}

impl Default for AdapterParams {
    fn default() -> Self {
        Self { rank: 16, alpha: 32, dropout: 0.05 }
    }
}

/// Training file, relative paths resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub config_name: String,
    pub base_model: String,
    pub dataset_ref: DatasetRef,
    /// Language counts drawn into the training set.
    pub mix: Vec<(Language, usize)>,
    pub epochs: u32,
    pub learning_rate: f64,
    pub adapter: AdapterParams,
    pub seed: u64,
    pub prompt_template_id: String,
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        let bad = |reason: &str| {
            Err(FinetuneError::InvalidConfig { name: self.config_name.clone(), reason: reason.into() })
        };
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.config_name.is_empty() || self.base_model.is_empty() {
            return bad("config_name and base_model are required");
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("configs serialize").as_bytes())
    }
}

/// The six training sets as `(name, mix)` for a total of `train_size` items.
pub fn registry_mixes(train_size: usize) -> Result<Vec<(&'static str, Vec<(Language, usize)>)>, FinetuneError> {
    if train_size == 0 || train_size % 3 != 0 {
        return Err(FinetuneError::BadTrainSize(train_size));
    }
    let (third, two_thirds) = (train_size / 3, 2 * train_size / 3);
    use Language::*;
    Ok(vec![
        ("en", vec![(En, train_size)]),
        ("es", vec![(Es, train_size)]),
        ("cs", vec![(Cs, train_size)]),
        ("en_cs", vec![(En, two_thirds), (Cs, third)]),
        ("es_cs", vec![(Es, two_thirds), (Cs, third)]),
        ("en_es_cs", vec![(En, third), (Es, third), (Cs, third)]),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryOptions {
    pub base_model: String,
    pub train_size: usize,
    pub seed: u64,
    pub epochs: u32,
    pub learning_rate: f64,
    pub adapter: AdapterParams,
}

impl RegistryOptions {
    pub fn new(base_model: impl Into<String>, seed: u64) -> Self {
        Self {
            base_model: base_model.into(),
            train_size: 150,
            seed,
            epochs: 3,
            learning_rate: 2e-4,
            adapter: AdapterParams::default(),
        }
    }
}

/// Build the six configurations and their training sets, writing each set to
/// `{dir}/{name}.dataset.jsonl`.
pub fn config_registry(
    train_views: &BTreeMap<Language, DatasetView>,
    options: &RegistryOptions,
    dir: &Path,
) -> Result<Vec<(FinetuneConfig, DatasetView)>, FinetuneError> {
    for lang in Language::ALL {
        if !train_views.contains_key(&lang) {
            return Err(FinetuneError::MissingTrainView(lang));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut out = Vec::new();
    for (name, parts) in registry_mixes(options.train_size)? {
        let view = compose_mix(train_views, &MixSpec::new(parts.clone(), options.seed), false)?;
        let file = PathBuf::from(format!("{name}.dataset.jsonl"));
        let bytes = view.encode();
        let path = dir.join(&file);
        crate::util::write_if_changed(&path, bytes.as_bytes()).map_err(|e| io_err(&path, e))?;
        let config = FinetuneConfig {
            config_name: name.to_string(),
            base_model: options.base_model.clone(),
            dataset_ref: DatasetRef { path: file, sha256: sha256_hex(bytes.as_bytes()) },
            mix: parts,
            epochs: options.epochs,
            learning_rate: options.learning_rate,
            adapter: options.adapter.clone(),
            seed: options.seed,
            prompt_template_id: PROMPT_TEMPLATE_ID.to_string(),
        };
        config.validate()?;
        out.push((config, view));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub system: String,
    pub prompt: String,
    pub completion: String,
}

/// One record per item: the zero-shot grading prompt and the gold verdict word.
pub fn build_training_records(view: &DatasetView) -> Vec<TrainingRecord> {
    let mode = GradingMode::zero_shot();
    view.items
        .iter()
        .map(|item| TrainingRecord {
            system: SYSTEM_PROMPT.to_string(),
            prompt: grading_user_content(item, &mode),
            completion: item.label.verdict_word().to_string(),
        })
        .collect()
}

pub fn encode_records(records: &[TrainingRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}
