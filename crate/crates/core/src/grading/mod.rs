//! Grading harness: one prompt template for every language and setup, three ways
//! of turning model output into a ranking score, exact AUC, and transfer matrices.

mod auc;
mod eval;
mod matrix;
mod prompt;
mod score;

pub use auc::{auc, auc_brute_force};
pub use eval::{evaluate_dataset, EvalOptions, EvalRun, ItemScore, MAX_BACKEND_ERROR_SHARE};
pub use matrix::{relative_improvement, transfer_matrix, MatrixCell, MatrixRow, TransferMatrix};
pub use prompt::{
    build_grading_prompt, grading_user_content, Exemplar, GradingMode, ModeKind, SYSTEM_PROMPT,
    PROMPT_TEMPLATE_ID,
};
pub use score::{parse_verdict, score_item, ScoringStrategy, StrategyKind, Verdict};

use crate::modelio::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum GradingError {
    #[error("few-shot grading needs exemplars")]
    MissingExemplars,
    #[error("exemplar {0:?} is part of the dataset being scored")]
    ExemplarLeak(String),
    #[error("dataset must hold exactly one language")]
    MixedLanguages,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not a finite number")]
    NonFiniteScore(f64),
    #[error("item {item_id}: {source}")]
    Backend {
        item_id: String,
        #[source]
        source: ModelError,
    },
    #[error("{failed} of {total} items hit backend errors (limit 5%)")]
    TooManyBackendErrors { failed: usize, total: usize },
    #[error("duplicate matrix cell ({config}, {language})")]
    DuplicateCell { config: String, language: crate::Language },
    #[error("baseline AUC must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("run file {path}: {message}")]
    RunFile { path: String, message: String },
}
