use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, Completion, ModelError};
use crate::util::Clock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub timestamp: String,
    pub backend_id: String,
    pub model: String,
    pub request: ChatRequest,
    pub response: Option<Vec<Completion>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only JSONL log of every request/response pair.
#[derive(Debug)]
pub struct Transcript {
    file: Mutex<File>,
    clock: Clock,
}

impl Transcript {
    pub fn open(path: &Path, clock: Clock) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file), clock })
    }

    pub fn append(&self, entry: &TranscriptEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).expect("entries serialize");
        line.push('\n');
        let mut f = self.file.lock().expect("transcript lock poisoned");
        f.write_all(line.as_bytes())?;
        f.flush()
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }
}

/// Wraps a backend so every call lands in a [`Transcript`].
pub struct LoggedBackend {
    inner: Arc<dyn Backend>,
    transcript: Arc<Transcript>,
}

impl LoggedBackend {
    pub fn new(inner: Arc<dyn Backend>, transcript: Arc<Transcript>) -> Self {
        Self { inner, transcript }
    }
}

impl Backend for LoggedBackend {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Vec<Completion>, ModelError> {
        let result = self.inner.complete(request);
        let entry = TranscriptEntry {
            timestamp: self.transcript.clock.now(),
            backend_id: self.inner.backend_id().to_string(),
            model: self.inner.model().to_string(),
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        if let Err(e) = self.transcript.append(&entry) {
            log::error!("failed to write transcript entry: {e}");
        }
        result
    }

    fn with_model(&self, model: &str) -> Arc<dyn Backend> {
        Arc::new(LoggedBackend { inner: self.inner.with_model(model), transcript: self.transcript.clone() })
    }
}
