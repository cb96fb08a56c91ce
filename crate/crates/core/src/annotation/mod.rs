//! Human verification: review assignments, an append-only rating log,
//! agreement metrics and the dataset acceptance decision.

mod agreement;
mod review;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use agreement::{
    acceptance_decision, agreement_metrics, Adjudication, AcceptanceThresholds, AgreementReport, Coverage,
    Decision, Disagreement,
};
pub use review::{review_items, review_session, ReviewItem, SessionSummary};

use crate::corpus::DatasetView;
use crate::util::seeded_rng;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("nothing to sample from")]
    EmptyPool,
    #[error("fraction {0} is outside (0, 1]")]
    BadFraction(f64),
    #[error("sample of {fraction} over {available} items is empty")]
    EmptySample { fraction: f64, available: usize },
    #[error("pool holds {available} items but the assignments need {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("overlap {overlap} exceeds per-annotator count {per_annotator}")]
    OverlapTooLarge { overlap: usize, per_annotator: usize },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("item `{item_id}` is not assigned to `{annotator_id}` for {task}")]
    NotAssigned { annotator_id: String, item_id: String, task: Task },
    #[error("{task} ratings need metrics {expected:?}, got {got:?}")]
    WrongMetrics { task: Task, expected: Vec<&'static str>, got: Vec<String> },
    #[error("metric `{metric}` has non-binary value {value}")]
    NonBinary { metric: String, value: u8 },
    #[error("assignments must cover the same task for two different annotators")]
    MismatchedAssignments,
    #[error("unrated assigned items: {}", .0.iter().map(|(a, i)| format!("{a}/{i}")).collect::<Vec<_>>().join(", "))]
    Unrated(Vec<(String, String)>),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> AnnotationError {
    AnnotationError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LabelCheck,
    TranslationCheck,
}

impl Task {
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            Task::LabelCheck => &["agree"],
            Task::TranslationCheck => &["accurateness", "naturalness"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::LabelCheck => "label_check",
            Task::TranslationCheck => "translation_check",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "label_check" => Ok(Task::LabelCheck),
            "translation_check" => Ok(Task::TranslationCheck),
            other => Err(format!("unknown task `{other}` (label_check, translation_check)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewAssignment {
    pub task: Task,
    pub annotator_id: String,
    pub item_ids: Vec<String>,
    /// Items also assigned to the other annotator.
    pub overlap_ids: Vec<String>,
}

impl ReviewAssignment {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let bad = |m: String| Err(AnnotationError::InvalidAssignment(m));
        let items: BTreeSet<&str> = self.item_ids.iter().map(String::as_str).collect();
        if items.len() != self.item_ids.len() {
            return bad(format!("`{}` has duplicate item ids", self.annotator_id));
        }
        if let Some(x) = self.overlap_ids.iter().find(|o| !items.contains(o.as_str())) {
            return bad(format!("overlap id `{x}` is not among `{}`'s items", self.annotator_id));
        }
        Ok(())
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.item_ids.iter().any(|i| i == item_id)
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        let text = serde_json::to_string_pretty(self).expect("assignments serialize") + "\n";
        crate::util::write_if_changed(path, text.as_bytes()).map_err(|e| io_err(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let a: Self = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        a.validate()?;
        Ok(a)
    }
}

/// Same random sample for both annotators: `⌊fraction·N⌋` items without replacement.
pub fn sample_for_label_review(
    view: &DatasetView,
    fraction: f64,
    seed: u64,
    annotators: [&str; 2],
) -> Result<[ReviewAssignment; 2], AnnotationError> {
    if view.is_empty() {
        return Err(AnnotationError::EmptyPool);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AnnotationError::BadFraction(fraction));
    }
    let mut ids: Vec<String> = view.items.iter().map(|i| i.item_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut seeded_rng(seed, "label_review"));
    // tolerate representation error such as 0.1 · 30 = 3.0000000000000004
    let k = ((fraction * ids.len() as f64) + 1e-9).floor() as usize;
    if k == 0 {
        return Err(AnnotationError::EmptySample { fraction, available: ids.len() });
    }
    ids.truncate(k.min(ids.len()));
    Ok(annotators.map(|a| ReviewAssignment {
        task: Task::LabelCheck,
        annotator_id: a.to_string(),
        item_ids: ids.clone(),
        overlap_ids: ids.clone(),
    }))
}

/// `per_annotator` items each, exactly `overlap` of them shared.
pub fn make_translation_assignments(
    pool: &[String],
    per_annotator: usize,
    overlap: usize,
    seed: u64,
    annotators: [&str; 2],
) -> Result<[ReviewAssignment; 2], AnnotationError> {
    if pool.is_empty() {
        return Err(AnnotationError::EmptyPool);
    }
    if overlap > per_annotator {
        return Err(AnnotationError::OverlapTooLarge { overlap, per_annotator });
    }
    let mut ids: Vec<String> = pool.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let needed = 2 * per_annotator - overlap;
    if needed > ids.len() {
        return Err(AnnotationError::PoolTooSmall { needed, available: ids.len() });
    }
    ids.shuffle(&mut seeded_rng(seed, "translation_review"));
    let shared = &ids[..overlap];
    let own = per_annotator - overlap;
    let a_only = &ids[overlap..overlap + own];
    let b_only = &ids[overlap + own..needed];
    let build = |who: &str, only: &[String]| {
        let mut item_ids: Vec<String> = shared.iter().chain(only).cloned().collect();
        item_ids.shuffle(&mut seeded_rng(seed, &format!("translation_review:{who}")));
        ReviewAssignment {
            task: Task::TranslationCheck,
            annotator_id: who.to_string(),
            item_ids,
            overlap_ids: shared.to_vec(),
        }
    };
    Ok([build(annotators[0], a_only), build(annotators[1], b_only)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub annotator_id: String,
    pub item_id: String,
    pub task: Task,
    pub values: BTreeMap<String, u8>,
    pub timestamp: String,
}

impl Rating {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let expected = self.task.metrics();
        let got: Vec<String> = self.values.keys().cloned().collect();
        let mut want: Vec<&str> = expected.to_vec();
        want.sort();
        if got.iter().map(String::as_str).ne(want.iter().copied()) {
            return Err(AnnotationError::WrongMetrics { task: self.task, expected: expected.to_vec(), got });
        }
        if let Some((metric, value)) = self.values.iter().find(|(_, v)| **v > 1) {
            return Err(AnnotationError::NonBinary { metric: metric.clone(), value: *value });
        }
        Ok(())
    }
}

/// Event-sourced rating store. The log keeps every rating; the projection
/// keeps the latest per `(annotator, task, item)`.
#[derive(Debug, Default)]
pub struct RatingStore {
    log: Vec<Rating>,
    latest: BTreeMap<(String, Task, String), usize>,
    assignments: Vec<ReviewAssignment>,
    path: Option<PathBuf>,
}

impl RatingStore {
    pub fn new(assignments: Vec<ReviewAssignment>) -> Self {
        Self { assignments, ..Self::default() }
    }

    /// Open (or create) a JSONL log and replay it.
    pub fn open(path: &Path, assignments: Vec<ReviewAssignment>) -> Result<Self, AnnotationError> {
        let mut store = Self::new(assignments);
        if path.exists() {
            for rating in read_log(path)? {
                store.apply(rating);
            }
        }
        store.path = Some(path.to_path_buf());
        Ok(store)
    }

    /// Read-only union of several annotators' logs.
    pub fn merge_logs(paths: &[PathBuf], assignments: Vec<ReviewAssignment>) -> Result<Self, AnnotationError> {
        let mut store = Self::new(assignments);
        for p in paths {
            for rating in read_log(p)? {
                store.apply(rating);
            }
        }
        Ok(store)
    }

    fn apply(&mut self, rating: Rating) {
        let key = (rating.annotator_id.clone(), rating.task, rating.item_id.clone());
        self.latest.insert(key, self.log.len());
        self.log.push(rating);
    }

    pub fn log(&self) -> &[Rating] {
        &self.log
    }

    pub fn assignments(&self) -> &[ReviewAssignment] {
        &self.assignments
    }

    pub fn latest(&self, annotator_id: &str, task: Task, item_id: &str) -> Option<&Rating> {
        self.latest
            .get(&(annotator_id.to_string(), task, item_id.to_string()))
            .map(|i| &self.log[*i])
    }

    /// Latest ratings in key order.
    pub fn projection(&self) -> Vec<&Rating> {
        self.latest.values().map(|i| &self.log[*i]).collect()
    }

    pub fn record_rating(&mut self, rating: Rating) -> Result<(), AnnotationError> {
        rating.validate()?;
        let assigned = self
            .assignments
            .iter()
            .any(|a| a.annotator_id == rating.annotator_id && a.task == rating.task && a.contains(&rating.item_id));
        if !assigned {
            return Err(AnnotationError::NotAssigned {
                annotator_id: rating.annotator_id,
                item_id: rating.item_id,
                task: rating.task,
            });
        }
        if let Some(path) = &self.path {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| io_err(path, e))?;
            let line = serde_json::to_string(&rating).expect("ratings serialize");
            writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
        }
        self.apply(rating);
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Rating>, AnnotationError> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rating: Rating = serde_json::from_str(&line).map_err(|e| AnnotationError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rating);
    }
    Ok(out)
}
