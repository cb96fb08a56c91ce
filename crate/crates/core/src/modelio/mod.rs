//! Chat-completion backends.
//!
//! Every stage that talks to a model goes through [`Backend`]. Two implementations
//! ship: [`HttpBackend`] for any server exposing the chat-completions wire shape, and
//! [`MockBackend`], a pure function of its script and the request, used to run the
//! whole pipeline offline.

mod http;
mod mock;
mod transcript;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::HttpBackend;
pub use mock::{LogprobScript, MockBackend, MockResponse, MockRule, MockScript};
pub use transcript::{LoggedBackend, Transcript, TranscriptEntry};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("authentication failed ({status}): {body}")]
    Auth { status: u16, body: String },
    #[error("rate limited; gave up after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response does not match the chat-completions schema: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub want_logprobs: bool,
    #[serde(default = "one")]
    pub n_samples: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn one() -> u32 {
    1
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_tokens: 512,
            want_logprobs: false,
            n_samples: 1,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| ModelError::InvalidRequest("no messages".into()))?;
        if first.role == Role::Assistant {
            return Err(ModelError::InvalidRequest("first message must be system or user".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ModelError::InvalidRequest(format!("temperature {} < 0", self.temperature)));
        }
        if self.max_tokens == 0 || self.n_samples == 0 {
            return Err(ModelError::InvalidRequest("max_tokens and n_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// `role: content` lines, the text mock rules match against.
    pub fn flat_text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(role);
            out.push_str(": ");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    /// Sorted by descending logprob.
    pub top_alternatives: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub backend_id: String,
}

pub trait Backend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn model(&self) -> &str;

    /// Returns `request.n_samples` completions.
    fn complete(&self, request: &ChatRequest) -> Result<Vec<Completion>, ModelError>;

    /// The same backend addressing a different model (e.g. a served adapter).
    fn with_model(&self, model: &str) -> Arc<dyn Backend>;
}

/// Validate and send `request`, returning the first completion.
pub fn complete(backend: &dyn Backend, request: &ChatRequest) -> Result<Completion, ModelError> {
    request.validate()?;
    backend
        .complete(request)?
        .into_iter()
        .next()
        .ok_or_else(|| ModelError::BadResponse("no completions returned".into()))
}

/// Apply `f` to every input with at most `max_in_flight` calls running at once.
/// Results come back in input order regardless of completion order.
pub fn map_bounded<T, R, F>(inputs: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(inputs.len());
    if workers <= 1 {
        return inputs.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = Vec::with_capacity(inputs.len());
    slots.resize_with(inputs.len(), || None);
    let results = std::sync::Mutex::new(slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let r = f(i, &inputs[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every index is visited"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay_ms: 500 }
    }
}

/// Backend configuration file. Credentials are only ever read from the
/// environment variable named here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_env_var: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// When set, the backend is a [`MockBackend`] driven by this script file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(script), Some(dir)) = (&cfg.mock_script, path.parent()) {
            if script.is_relative() {
                cfg.mock_script = Some(dir.join(script));
            }
        }
        Ok(cfg)
    }

    /// Build the backend this config describes.
    pub fn build(&self) -> Result<Arc<dyn Backend>, ModelError> {
        match &self.mock_script {
            Some(path) => {
                let script = MockScript::load(path)?;
                Ok(Arc::new(MockBackend::new(&self.backend_id, &self.model_name, script)?))
            }
            None => Ok(Arc::new(HttpBackend::new(self.clone())?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new(vec![]).validate().is_err());
        assert!(ChatRequest::new(vec![Message::assistant("hi")]).validate().is_err());
        let mut r = ChatRequest::new(vec![Message::system("s"), Message::user("u")]);
        assert!(r.validate().is_ok());
        r.temperature = -0.1;
        assert!(r.validate().is_err());
        r.temperature = 0.0;
        r.n_samples = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn map_bounded_preserves_order_at_any_concurrency() {
        let inputs: Vec<u64> = (0..50).collect();
        let work = |_: usize, x: &u64| {
            std::thread::sleep(std::time::Duration::from_micros((50 - x) * 20));
            x * x
        };
        let serial = map_bounded(&inputs, 1, work);
        for k in [2, 4, 16, 100] {
            assert_eq!(map_bounded(&inputs, k, work), serial);
        }
        assert!(map_bounded::<u64, u64, _>(&[], 4, work).is_empty());
    }

    #[test]
    fn config_resolves_relative_mock_script() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("script.json"),
            r#"{"seed":1,"rules":[{"pattern":"","response":{"text":"{{last_user}}"}}]}"#,
        )
        .unwrap();
        std::fs::write(
            dir.path().join("backend.json"),
            r#"{"backend_id":"m","model_name":"mock-model","mock_script":"script.json"}"#,
        )
        .unwrap();
        let cfg = BackendConfig::load(&dir.path().join("backend.json")).unwrap();
        assert_eq!(cfg.max_in_flight, 4);
        let backend = cfg.build().unwrap();
        let c = complete(backend.as_ref(), &ChatRequest::new(vec![Message::user("ping")])).unwrap();
        assert_eq!(c.text, "ping");
    }
}
