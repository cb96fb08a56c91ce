//! Tooling for building and evaluating bilingual (English / Spanish / Spanglish)
//! short-answer grading corpora.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: data model, JSONL persistence, stratified splits, mixed-language composition
//! - [`codemix`]: lexicon-based token language tagging and mix ratios
//! - [`modelio`]: chat-completions clients (HTTP and deterministic mock), transcripts
//! - [`synthesis`]: corpus generation and translation with automated quality gates
//! - [`annotation`]: human review assignments, rating log, agreement metrics
//! - [`grading`]: grading prompts, scoring strategies, exact AUC, transfer matrices
//! - [`finetune`]: fine-tuning configurations, run manifests, trainer boundary
//! - [`reporting`]: result tables, improvements, regression checks against reference values
//! - [`pipeline`]: declarative experiments wiring all stages together

pub mod annotation;
pub mod codemix;
pub mod corpus;
pub mod finetune;
pub mod grading;
pub mod modelio;
pub mod pipeline;
pub mod reporting;
pub mod synthesis;
pub mod util;

pub use corpus::{DatasetView, Item, Label, Language, ParallelGroup, Subject};
