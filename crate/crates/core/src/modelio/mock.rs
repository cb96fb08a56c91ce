use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Alternative, Backend, ChatRequest, Completion, ModelError, TokenLogprob};
use crate::util::stable_hash64;

/// Scripted logprobs at the single verdict position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogprobScript {
    /// Exactly these token logprobs.
    Fixed(BTreeMap<String, f64>),
    /// Two tokens whose probabilities are derived from a hash of
    /// (seed, model, request, sample index).
    Hashed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MockResponse {
    /// Completion text. `{{last_user}}`, `{{model}}` and `{{seed}}` are substituted.
    /// When empty and logprobs are scripted, the most likely token is used.
    #[serde(default)]
    pub text: String,
    /// Per-sample texts, cycled when `n_samples` exceeds the list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<LogprobScript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Regex over [`ChatRequest::flat_text`]. Empty matches everything.
    pub pattern: String,
    /// Optional regex the backend's model name must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub response: MockResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub seed: u64,
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))
    }
}

struct CompiledRule {
    pattern: Regex,
    model: Option<Regex>,
    response: MockResponse,
}

/// Deterministic scripted backend: the first rule whose pattern matches the
/// request decides the response. Output depends only on (script, model, request).
#[derive(Clone)]
pub struct MockBackend {
    backend_id: String,
    model: String,
    seed: u64,
    rules: Arc<Vec<CompiledRule>>,
    script: Arc<MockScript>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("backend_id", &self.backend_id)
            .field("model", &self.model)
            .field("rules", &self.rules.len())
            .finish()
    }
}

fn compile(p: &str) -> Result<Regex, ModelError> {
    Regex::new(p).map_err(|e| ModelError::Config(format!("bad mock pattern {p:?}: {e}")))
}

impl MockBackend {
    /// The last rule must be an unconditional catch-all so every request has an answer.
    pub fn new(backend_id: &str, model: &str, script: MockScript) -> Result<Self, ModelError> {
        let last = script
            .rules
            .last()
            .ok_or_else(|| ModelError::Config("mock script has no rules".into()))?;
        let catch_all = matches!(last.pattern.as_str(), "" | ".*" | "(?s).*") && last.model.is_none();
        if !catch_all {
            return Err(ModelError::Config(
                "the final mock rule must be a catch-all (empty pattern, no model filter)".into(),
            ));
        }
        let rules = script
            .rules
            .iter()
            .map(|r| {
                Ok(CompiledRule {
                    pattern: compile(&r.pattern)?,
                    model: r.model.as_deref().map(compile).transpose()?,
                    response: r.response.clone(),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self {
            backend_id: backend_id.to_string(),
            model: model.to_string(),
            seed: script.seed,
            rules: Arc::new(rules),
            script: Arc::new(script),
        })
    }

    /// Script with a single catch-all rule.
    pub fn single(backend_id: &str, seed: u64, response: MockResponse) -> Self {
        let script = MockScript {
            seed,
            rules: vec![MockRule { pattern: String::new(), model: None, response }],
        };
        Self::new(backend_id, "mock", script).expect("catch-all script is valid")
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn render(&self, template: &str, request: &ChatRequest) -> String {
        template
            .replace("{{last_user}}", request.last_user_content().unwrap_or(""))
            .replace("{{model}}", &self.model)
            .replace("{{seed}}", &self.seed.to_string())
    }

    fn logprobs_for(&self, script: &LogprobScript, request_key: &str, sample: u32) -> Vec<Alternative> {
        let mut alts: Vec<Alternative> = match script {
            LogprobScript::Fixed(map) => map
                .iter()
                .map(|(token, logprob)| Alternative { token: token.clone(), logprob: *logprob })
                .collect(),
            LogprobScript::Hashed(tokens) => {
                let h = stable_hash64(&format!("{}|{}|{request_key}|{sample}", self.seed, self.model));
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                let p = 0.02 + 0.96 * u;
                tokens
                    .iter()
                    .enumerate()
                    .map(|(i, token)| Alternative {
                        token: token.clone(),
                        logprob: if i == 0 { p.ln() } else { ((1.0 - p) / (tokens.len() - 1) as f64).ln() },
                    })
                    .collect()
            }
        };
        alts.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.token.cmp(&b.token)));
        alts
    }
}

impl Backend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Vec<Completion>, ModelError> {
        request.validate()?;
        let text = request.flat_text();
        let rule = self
            .rules
            .iter()
            .find(|r| r.pattern.is_match(&text) && r.model.as_ref().is_none_or(|m| m.is_match(&self.model)))
            .expect("catch-all rule is enforced at construction");
        let request_key = serde_json::to_string(request).expect("requests serialize");

        Ok((0..request.n_samples)
            .map(|i| {
                let alts = rule.response.logprobs.as_ref().map(|s| self.logprobs_for(s, &request_key, i));
                let template = if rule.response.samples.is_empty() {
                    &rule.response.text
                } else {
                    &rule.response.samples[i as usize % rule.response.samples.len()]
                };
                let mut body = self.render(template, request);
                if body.is_empty() {
                    if let Some(top) = alts.as_ref().and_then(|a| a.first()) {
                        body = top.token.clone();
                    }
                }
                let token_logprobs = match alts {
                    Some(alts) if request.want_logprobs && !alts.is_empty() => Some(vec![TokenLogprob {
                        token: alts[0].token.clone(),
                        logprob: alts[0].logprob,
                        top_alternatives: alts,
                    }]),
                    _ => None,
                };
                Completion { text: body, token_logprobs, backend_id: self.backend_id.clone() }
            })
            .collect())
    }

    fn with_model(&self, model: &str) -> Arc<dyn Backend> {
        let mut next = self.clone();
        next.model = model.to_string();
        Arc::new(next)
    }
}
