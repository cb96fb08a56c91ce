use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_training_records, encode_records, io_err, FinetuneConfig, FinetuneError, Trainer};
use crate::corpus::DatasetView;
use crate::util::{sha256_hex, write_atomic, Clock};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Complete,
    Failed,
}

impl RunStatus {
    fn can_become(self, next: RunStatus) -> bool {
        matches!(
            (self, next),
            (RunStatus::Pending, RunStatus::Running)
                | (RunStatus::Running, RunStatus::Complete)
                | (RunStatus::Running, RunStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub train_loss_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: String,
    pub config: FinetuneConfig,
    pub created_at: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TrainMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(config: FinetuneConfig, clock: &Clock) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION.to_string(),
            config,
            created_at: clock.now(),
            status: RunStatus::Pending,
            artifact_ref: None,
            metrics: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests serialize") + "\n"
    }

    /// Dataset path, resolved against the manifest's directory when relative.
    pub fn dataset_path(&self, manifest_path: &Path) -> PathBuf {
        let p = &self.config.dataset_ref.path;
        if p.is_absolute() {
            p.clone()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    fn transition(&mut self, next: RunStatus, path: &Path) -> Result<(), FinetuneError> {
        if !self.status.can_become(next) {
            return Err(FinetuneError::IllegalTransition { path: path.display().to_string(), from: self.status, to: next });
        }
        self.status = next;
        Ok(())
    }
}

/// Write atomically; an unchanged manifest leaves the file untouched.
pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), FinetuneError> {
    manifest.config.validate()?;
    crate::util::write_if_changed(path, manifest.to_json().as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read, check the version, and check the dataset file against its recorded hash.
pub fn read_manifest(path: &Path) -> Result<RunManifest, FinetuneError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    let version = raw.get("manifest_version").and_then(|v| v.as_str()).unwrap_or("");
    if version != MANIFEST_VERSION {
        return Err(FinetuneError::VersionMismatch { found: version.to_string(), expected: MANIFEST_VERSION.into() });
    }
    let manifest: RunManifest = serde_json::from_value(raw).map_err(|e| io_err(path, e))?;
    let data = manifest.dataset_path(path);
    let bytes = std::fs::read(&data).map_err(|e| io_err(&data, e))?;
    let actual = sha256_hex(&bytes);
    if actual != manifest.config.dataset_ref.sha256 {
        return Err(FinetuneError::HashMismatch {
            path: data.display().to_string(),
            expected: manifest.config.dataset_ref.sha256.clone(),
            actual,
        });
    }
    Ok(manifest)
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(manifest: &Path) -> Result<Self, FinetuneError> {
        let lock = manifest.with_extension("lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(Self(lock)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(FinetuneError::Locked(manifest.display().to_string()))
            }
            Err(e) => Err(io_err(&lock, e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// Run a pending manifest through `trainer`.
///
/// The running status is written before training starts, so a crash leaves a
/// manifest that the next launch marks failed. Complete and failed manifests
/// are returned unchanged.
pub fn launch(trainer: &dyn Trainer, manifest_path: &Path) -> Result<RunManifest, FinetuneError> {
    let _lock = LockGuard::acquire(manifest_path)?;
    let mut manifest = read_manifest(manifest_path)?;
    match manifest.status {
        RunStatus::Complete | RunStatus::Failed => {
            log::warn!("{} is already {:?}; nothing to do", manifest_path.display(), manifest.status);
            return Ok(manifest);
        }
        RunStatus::Running => {
            manifest.transition(RunStatus::Failed, manifest_path)?;
            manifest.error = Some("interrupted: found running with no active launch".into());
            write_manifest(&manifest, manifest_path)?;
            return Ok(manifest);
        }
        RunStatus::Pending => {}
    }

    let data = manifest.dataset_path(manifest_path);
    let view = DatasetView::load(&data)?;
    let records_path = manifest_path.with_extension("records.jsonl");
    crate::util::write_if_changed(&records_path, encode_records(&build_training_records(&view)).as_bytes())
        .map_err(|e| io_err(&records_path, e))?;

    manifest.transition(RunStatus::Running, manifest_path)?;
    write_atomic(manifest_path, manifest.to_json().as_bytes()).map_err(|e| io_err(manifest_path, e))?;

    let result = trainer.train(&manifest, manifest_path, &records_path);
    match (result.status.as_str(), result.artifact_ref) {
        ("complete", Some(artifact)) => {
            manifest.transition(RunStatus::Complete, manifest_path)?;
            manifest.artifact_ref = Some(artifact);
            manifest.metrics = Some(TrainMetrics { train_loss_final: result.train_loss_final });
        }
        (status, _) => {
            manifest.transition(RunStatus::Failed, manifest_path)?;
            manifest.error = Some(result.error.unwrap_or_else(|| format!("trainer reported `{status}` without an artifact")));
        }
    }
    write_manifest(&manifest, manifest_path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::testing::balanced_pool;
    use crate::corpus::Language;
    use crate::finetune::{AdapterParams, DatasetRef, MockTrainer, TrainResult};

    fn setup(dir: &Path, name: &str) -> PathBuf {
        let pool = balanced_pool(1);
        let view = DatasetView::from_groups(&pool, Language::Cs);
        let data = dir.join(format!("{name}.dataset.jsonl"));
        view.save(&data).unwrap();
        let config = FinetuneConfig {
            config_name: name.into(),
            base_model: "base".into(),
            dataset_ref: DatasetRef {
                path: PathBuf::from(format!("{name}.dataset.jsonl")),
                sha256: sha256_hex(view.encode().as_bytes()),
            },
            mix: vec![(Language::Cs, view.len())],
            epochs: 3,
            learning_rate: 2e-4,
            adapter: AdapterParams::default(),
            seed: 1,
            prompt_template_id: "grading-v1".into(),
        };
        let path = dir.join(format!("{name}.manifest.json"));
        write_manifest(&RunManifest::new(config, &Clock::Fixed("2024-01-01T00:00:00.000Z".into())), &path).unwrap();
        path
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), "cs");
        let before = std::fs::read(&path).unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.to_json().as_bytes(), &before[..]);
    }

    #[test]
    fn tampered_dataset_and_bad_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), "cs");
        std::fs::write(dir.path().join("cs.dataset.jsonl"), "tampered\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(FinetuneError::HashMismatch { .. })));

        let path = setup(dir.path(), "es");
        let text = std::fs::read_to_string(&path).unwrap().replace("\"manifest_version\": \"1\"", "\"manifest_version\": \"999\"");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_manifest(&path), Err(FinetuneError::VersionMismatch { .. })));
    }

    #[test]
    fn mock_launch_completes_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), "cs");
        let m = launch(&MockTrainer::default(), &path).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        let artifact = m.artifact_ref.clone().unwrap();
        assert!(artifact.starts_with("mock-adapter-"));
        assert!(path.with_extension("records.jsonl").exists());
        assert!(!path.with_extension("lock").exists());

        let bytes = std::fs::read(&path).unwrap();
        let again = launch(&MockTrainer::default(), &path).unwrap();
        assert_eq!(again, m);
        assert_eq!(std::fs::read(&path).unwrap(), bytes);

        let other = tempfile::tempdir().unwrap();
        let p2 = setup(other.path(), "cs");
        assert_eq!(launch(&MockTrainer::default(), &p2).unwrap().artifact_ref.unwrap(), artifact);
    }

    #[test]
    fn failing_trainer_records_reason() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), "cs");
        let trainer = MockTrainer { fail_configs: BTreeSet::from(["cs".to_string()]) };
        let m = launch(&trainer, &path).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        assert!(m.error.unwrap().contains("scripted failure"));
        assert!(m.artifact_ref.is_none());
    }

    struct Crash;
    impl Trainer for Crash {
        fn train(&self, _: &RunManifest, path: &Path, _: &Path) -> TrainResult {
            let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
            assert_eq!(m.status, RunStatus::Running);
            panic!("trainer crashed");
        }
    }

    #[test]
    fn crash_leaves_running_which_relaunch_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), "cs");
        let p = path.clone();
        assert!(std::panic::catch_unwind(move || launch(&Crash, &p)).is_err());
        let m = launch(&MockTrainer::default(), &path).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        assert!(m.error.unwrap().contains("interrupted"));
    }

    #[test]
    fn concurrent_launch_is_locked() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), "cs");
        std::fs::write(path.with_extension("lock"), "").unwrap();
        assert!(matches!(launch(&MockTrainer::default(), &path), Err(FinetuneError::Locked(_))));
    }
}
