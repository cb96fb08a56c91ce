use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Alternative, Backend, BackendConfig, ChatRequest, Completion, ModelError, TokenLogprob};

const TOP_LOGPROBS: u32 = 5;

/// Client for servers exposing `POST {base_url}/chat/completions`.
#[derive(Clone)]
pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("backend_id", &self.config.backend_id)
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model_name)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    index: usize,
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireAlt>,
}

#[derive(Deserialize)]
struct WireAlt {
    token: String,
    logprob: f64,
}

enum Attempt {
    Done(Vec<Completion>),
    Retry { rate_limited: bool, message: String },
    Fatal(ModelError),
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, ModelError> {
        if config.base_url.trim().is_empty() {
            return Err(ModelError::Config(format!("backend `{}` has no base_url", config.backend_id)));
        }
        let api_key = match &config.credentials_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ModelError::Config(format!("credentials variable `{var}` is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ModelError::Config(format!("http client: {e}")))?;
        Ok(Self { config, api_key, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Request body in the chat-completions wire shape.
    pub fn wire_body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "logprobs": request.want_logprobs,
        });
        if request.want_logprobs {
            body["top_logprobs"] = json!(TOP_LOGPROBS);
        }
        if request.n_samples > 1 {
            body["n"] = json!(request.n_samples);
        }
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry { rate_limited: false, message: e.to_string() },
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry { rate_limited: false, message: e.to_string() },
        };
        match status {
            200..=299 => match self.parse(&text) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(ModelError::Auth { status, body: text }),
            429 => Attempt::Retry { rate_limited: true, message: text },
            408 | 500..=599 => Attempt::Retry { rate_limited: false, message: format!("HTTP {status}: {text}") },
            _ => Attempt::Fatal(ModelError::Http { status, body: text }),
        }
    }

    fn parse(&self, text: &str) -> Result<Vec<Completion>, ModelError> {
        let mut wire: WireResponse =
            serde_json::from_str(text).map_err(|e| ModelError::BadResponse(e.to_string()))?;
        if wire.choices.is_empty() {
            return Err(ModelError::BadResponse("empty `choices`".into()));
        }
        wire.choices.sort_by_key(|c| c.index);
        wire.choices
            .into_iter()
            .map(|choice| {
                let token_logprobs = choice
                    .logprobs
                    .and_then(|l| l.content)
                    .map(|tokens| tokens.into_iter().map(convert_token).collect::<Result<Vec<_>, _>>())
                    .transpose()?;
                Ok(Completion {
                    text: choice.message.content.unwrap_or_default(),
                    token_logprobs,
                    backend_id: self.config.backend_id.clone(),
                })
            })
            .collect()
    }
}

fn check_logprob(lp: f64) -> Result<f64, ModelError> {
    // servers occasionally emit tiny positive values from float error
    if lp.is_nan() || lp > 1e-6 {
        return Err(ModelError::BadResponse(format!("logprob {lp} is not <= 0")));
    }
    Ok(lp.min(0.0))
}

fn convert_token(t: WireToken) -> Result<TokenLogprob, ModelError> {
    let mut top_alternatives = t
        .top_logprobs
        .into_iter()
        .map(|a| Ok(Alternative { token: a.token, logprob: check_logprob(a.logprob)? }))
        .collect::<Result<Vec<_>, ModelError>>()?;
    top_alternatives.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    Ok(TokenLogprob { token: t.token, logprob: check_logprob(t.logprob)?, top_alternatives })
}

impl Backend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    fn model(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, request: &ChatRequest) -> Result<Vec<Completion>, ModelError> {
        request.validate()?;
        let body = self.wire_body(request);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last = (false, String::new());
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { rate_limited, message } => {
                    log::warn!(
                        "{}: attempt {attempt}/{attempts} failed: {message}",
                        self.config.backend_id
                    );
                    last = (rate_limited, message);
                    if attempt < attempts {
                        let delay = self.config.retry.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(if last.0 {
            ModelError::RateLimited { attempts }
        } else {
            ModelError::Transport { attempts, message: last.1 }
        })
    }

    fn with_model(&self, model: &str) -> Arc<dyn Backend> {
        let mut next = self.clone();
        next.config.model_name = model.to_string();
        Arc::new(next)
    }
}
