use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::RunManifest;
use crate::util::stable_hash64;

/// Contents of a trainer's `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrainResult {
    pub fn complete(artifact_ref: String, train_loss_final: Option<f64>) -> Self {
        Self { status: "complete".into(), artifact_ref: Some(artifact_ref), train_loss_final, error: None }
    }

    pub fn failed(error: impl Into<String>) -> Self {
        Self { status: "failed".into(), artifact_ref: None, train_loss_final: None, error: Some(error.into()) }
    }
}

/// Training boundary. Implementations receive the manifest and the serialized
/// records and report an adapter reference or a failure.
pub trait Trainer {
    fn train(&self, manifest: &RunManifest, manifest_path: &Path, records_path: &Path) -> TrainResult;
}

/// Deterministic stand-in: the adapter reference is derived from the config hash.
#[derive(Debug, Clone, Default)]
pub struct MockTrainer {
    /// Configurations that fail instead of completing.
    pub fail_configs: BTreeSet<String>,
}

impl MockTrainer {
    pub fn artifact_for(manifest: &RunManifest) -> String {
        format!("mock-adapter-{}", &manifest.config.config_hash()[..16])
    }
}

impl Trainer for MockTrainer {
    fn train(&self, manifest: &RunManifest, _manifest_path: &Path, records_path: &Path) -> TrainResult {
        if self.fail_configs.contains(&manifest.config.config_name) {
            return TrainResult::failed(format!("scripted failure for `{}`", manifest.config.config_name));
        }
        if !records_path.exists() {
            return TrainResult::failed(format!("records file {} is missing", records_path.display()));
        }
        let h = stable_hash64(&manifest.config.config_hash());
        let loss = 0.05 + (h % 1000) as f64 / 10_000.0;
        TrainResult::complete(Self::artifact_for(manifest), Some(loss))
    }
}

/// External trainer invoked as `program [args..] --manifest <path> --records <jsonl> --out <result.json>`.
#[derive(Debug, Clone)]
pub struct CommandTrainer {
    pub program: String,
    pub args: Vec<String>,
}

impl Trainer for CommandTrainer {
    fn train(&self, _manifest: &RunManifest, manifest_path: &Path, records_path: &Path) -> TrainResult {
        let out = manifest_path.with_extension("result.json");
        let _ = std::fs::remove_file(&out);
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg("--manifest")
            .arg(manifest_path)
            .arg("--records")
            .arg(records_path)
            .arg("--out")
            .arg(&out)
            .status();
        match status {
            Err(e) => return TrainResult::failed(format!("could not start `{}`: {e}", self.program)),
            Ok(s) if !s.success() => {
                if !out.exists() {
                    return TrainResult::failed(format!("`{}` exited with {s}", self.program));
                }
            }
            Ok(_) => {}
        }
        let text = match std::fs::read_to_string(&out) {
            Ok(t) => t,
            Err(e) => return TrainResult::failed(format!("no result file {}: {e}", out.display())),
        };
        match serde_json::from_str::<TrainResult>(&text) {
            Ok(r) => r,
            Err(e) => TrainResult::failed(format!("bad result file {}: {e}", out.display())),
        }
    }
}
