//! Corpus synthesis through a text-generation backend.
//!
//! English batches are generated a few items at a time, checked by automated
//! quality gates, and re-requested with the violations attached when a gate fails.
//! Accepted batches are then translated into Spanish and Spanglish; translations
//! are checked with the code-mix classifier.

mod gate;
mod generate;
mod prompts;

use serde::{Deserialize, Serialize};

pub use gate::{quality_gate, terminal_marks, GateReport, GateStage, Violation, ViolationClass};
pub use generate::{generate_corpus, translate_corpus, GenerationOutcome, ResumeToken};
pub use prompts::{
    attach_translations, build_generation_prompt, build_translation_prompt, extract_json_array,
    parse_generation_output, parse_translation_output, with_feedback, BatchContext, TranslatedAnswer,
    FEEDBACK_MARKER,
};

use crate::corpus::{CorpusError, Language, Subject, MAX_GRADE, MIN_GRADE};
use crate::modelio::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("invalid generation plan: {0}")]
    InvalidPlan(String),
    #[error("no JSON array found in model output")]
    NoJsonArray,
    #[error("model output is not valid JSON: {0}")]
    BadJson(String),
    #[error("element {index}: missing or non-string field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("element {index}: unknown grade {value:?}")]
    UnknownGrade { index: usize, value: String },
    #[error("nothing to translate")]
    NothingToTranslate,
    #[error("cannot translate into `{0}`")]
    BadTarget(Language),
    #[error("{groups} groups but {answers} translated answers")]
    CountMismatch { groups: usize, answers: usize },
    #[error("translated answer has unknown id `{0}`")]
    UnknownId(String),
    #[error("group `{group_id}`: monolingual leak, `{target}` translation reads as `{detected}`")]
    MonolingualLeak { group_id: String, target: Language, detected: Language },
    #[error("group `{group_id}`: translation has no English or Spanish words")]
    Untaggable { group_id: String },
    #[error("batch {batch_id}: gave up after {attempts} attempts ({violations}); progress saved, resume token at {resume}")]
    RetryCapExhausted { batch_id: String, attempts: u32, violations: String, resume: String },
    #[error("resume token was written for a different plan")]
    PlanChanged,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    /// Bound on mean acceptable / mean unacceptable answer length, either direction.
    pub max_length_ratio: f64,
    /// Minimum share of the minority label in a batch.
    pub min_label_balance: f64,
    /// Maximum number of items on one topic across the corpus.
    pub max_topic_repeats: usize,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self { max_length_ratio: 1.3, min_label_balance: 0.4, max_topic_repeats: 3 }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(self.max_length_ratio > 1.0) {
            return Err(SynthesisError::InvalidPlan("max_length_ratio must be > 1".into()));
        }
        if !(self.min_label_balance > 0.0 && self.min_label_balance <= 0.5) {
            return Err(SynthesisError::InvalidPlan("min_label_balance must be in (0, 0.5]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPlan {
    #[serde(default = "default_generator")]
    pub generator_id: String,
    pub subjects: Vec<Subject>,
    pub grade_min: u8,
    pub grade_max: u8,
    pub batches: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Spanglish ratio hints, cycled one per batch.
    #[serde(default = "default_ratios")]
    pub target_mix_ratios: Vec<f64>,
    #[serde(default)]
    pub gate_thresholds: GateThresholds,
    /// Re-prompts allowed per batch and stage after the first attempt.
    #[serde(default = "default_reprompts")]
    pub max_reprompts: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_cs_threshold")]
    pub cs_threshold: f64,
}

fn default_generator() -> String {
    "generator".into()
}
fn default_batch_size() -> usize {
    10
}
fn default_ratios() -> Vec<f64> {
    vec![0.3, 0.5, 0.7]
}
fn default_reprompts() -> u32 {
    3
}
fn default_temperature() -> f64 {
    0.8
}
fn default_cs_threshold() -> f64 {
    crate::codemix::DEFAULT_CS_THRESHOLD
}

impl GenerationPlan {
    pub fn new(subjects: Vec<Subject>, grades: std::ops::RangeInclusive<u8>, batches: usize) -> Self {
        Self {
            generator_id: default_generator(),
            subjects,
            grade_min: *grades.start(),
            grade_max: *grades.end(),
            batches,
            batch_size: default_batch_size(),
            target_mix_ratios: default_ratios(),
            gate_thresholds: GateThresholds::default(),
            max_reprompts: default_reprompts(),
            temperature: default_temperature(),
            cs_threshold: default_cs_threshold(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::InvalidPlan(m.into()));
        if self.subjects.is_empty() {
            return bad("no subjects");
        }
        if self.grade_min < MIN_GRADE || self.grade_max > MAX_GRADE || self.grade_min > self.grade_max {
            return bad("grades must lie within 6..=10");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.target_mix_ratios.is_empty() || self.target_mix_ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return bad("target_mix_ratios must be non-empty and inside (0, 1)");
        }
        self.gate_thresholds.validate()
    }

    /// Subject and grade for batch `index`, cycling subjects fastest.
    pub fn batch_target(&self, index: usize) -> (Subject, u8) {
        let grades = (self.grade_max - self.grade_min + 1) as usize;
        let combos = self.subjects.len() * grades;
        let k = index % combos;
        (self.subjects[k % self.subjects.len()], self.grade_min + (k / self.subjects.len()) as u8)
    }

    pub fn batch_id(index: usize) -> String {
        format!("b{index:03}")
    }

    pub fn ratio_hint(&self, index: usize) -> f64 {
        self.target_mix_ratios[index % self.target_mix_ratios.len()]
    }

    pub fn plan_hash(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).expect("plans serialize").as_bytes())
    }
}
