//! Result tables, relative improvements, and regression checks against the
//! embedded reference results.

mod render;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use render::{render, write_report, Format};

use crate::corpus::Language;
use crate::grading::{relative_improvement, EvalRun, GradingError, TransferMatrix};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("improvement `{label}` is missing `{missing}`")]
    MissingPair { label: String, missing: String },
    #[error("unknown format `{0}` (markdown, csv, json)")]
    UnknownFormat(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Grading(#[from] GradingError),
}

const BUILTIN_FIXTURE: &str = include_str!("../../data/reference_results.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureValue {
    pub id: String,
    pub value: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureCell {
    pub id: String,
    pub config: String,
    pub language: Language,
    /// `None` where the published results leave the cell unstated.
    pub value: Option<f64>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureAverage {
    pub id: String,
    pub config: String,
    pub value: f64,
    pub source: String,
}

/// A relative improvement between two referenced values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSpec {
    pub label: String,
    pub base: String,
    pub new: String,
    /// Published percentage, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<f64>,
    /// The published percentage was stated loosely.
    #[serde(default)]
    pub approximate: bool,
    #[serde(default)]
    pub source: String,
}

/// Published AUCs with a locator for each constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub fixture_id: String,
    pub values: Vec<FixtureValue>,
    pub matrix: Vec<FixtureCell>,
    pub averages: Vec<FixtureAverage>,
    pub improvements: Vec<ImprovementSpec>,
}

impl ReferenceFixture {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_FIXTURE).expect("builtin fixture parses")
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let err = |m: String| ReportError::Io { path: path.display().to_string(), message: m };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Any stated constant by id: scalar values, matrix cells and averages.
    pub fn get(&self, id: &str) -> Option<f64> {
        self.values
            .iter()
            .find(|v| v.id == id)
            .map(|v| v.value)
            .or_else(|| self.matrix.iter().find(|c| c.id == id).and_then(|c| c.value))
            .or_else(|| self.averages.iter().find(|a| a.id == id).map(|a| a.value))
    }

    pub fn average(&self, config: &str) -> Option<&FixtureAverage> {
        self.averages.iter().find(|a| a.config == config)
    }

    /// The per-language matrix from stated cells, provenance `fixture:{id}`.
    pub fn transfer_matrix(&self) -> TransferMatrix {
        TransferMatrix::from_cells(
            self.matrix
                .iter()
                .filter_map(|c| c.value.map(|v| (c.config.as_str(), c.language, v, format!("fixture:{}", c.id)))),
        )
        .expect("fixture cells are unique")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    /// Mean over the three languages; `None` when a cell is missing.
    pub mean: Option<f64>,
    pub missing: Vec<Language>,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageCell {
    pub language: Language,
    pub auc: Option<f64>,
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRow {
    pub config: String,
    pub cells: Vec<LanguageCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub label: String,
    pub base: f64,
    pub new: f64,
    pub percent: f64,
    pub base_ref: String,
    pub new_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub cell: String,
    pub computed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BundleProvenance {
    pub run_ids: Vec<String>,
    pub dataset_hashes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportBundle {
    pub title: String,
    pub summary_table: Vec<SummaryRow>,
    pub per_language_table: Vec<LanguageRow>,
    pub improvements: Vec<Improvement>,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
    pub provenance: BundleProvenance,
}

impl ReportBundle {
    pub fn checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Mean AUC per configuration; rows with a missing language carry no mean.
pub fn summary_table(matrix: &TransferMatrix) -> Vec<SummaryRow> {
    matrix
        .rows
        .iter()
        .map(|row| {
            let missing: Vec<Language> = row.cells.iter().filter(|(_, c)| c.is_none()).map(|(l, _)| *l).collect();
            let present: Vec<_> = row.cells.values().flatten().collect();
            let mean = missing
                .is_empty()
                .then(|| present.iter().map(|c| c.auc).sum::<f64>() / present.len() as f64);
            SummaryRow {
                config: row.config.clone(),
                mean,
                missing,
                provenance: present.iter().map(|c| c.run_id.clone()).collect(),
            }
        })
        .collect()
}

pub fn per_language_table(matrix: &TransferMatrix) -> Vec<LanguageRow> {
    matrix
        .rows
        .iter()
        .map(|row| LanguageRow {
            config: row.config.clone(),
            cells: Language::ALL
                .iter()
                .map(|l| {
                    let cell = row.cells.get(l).and_then(Option::as_ref);
                    LanguageCell { language: *l, auc: cell.map(|c| c.auc), provenance: cell.map(|c| c.run_id.clone()) }
                })
                .collect(),
        })
        .collect()
}

/// Apply [`relative_improvement`] to each spec; `lookup` resolves a reference to
/// `(auc, provenance)`.
pub fn improvements_report(
    specs: &[ImprovementSpec],
    lookup: impl Fn(&str) -> Option<(f64, String)>,
) -> Result<Vec<Improvement>, ReportError> {
    specs
        .iter()
        .map(|s| {
            let missing = |r: &str| ReportError::MissingPair { label: s.label.clone(), missing: r.to_string() };
            let (base, base_ref) = lookup(&s.base).ok_or_else(|| missing(&s.base))?;
            let (new, new_ref) = lookup(&s.new).ok_or_else(|| missing(&s.new))?;
            let percent = relative_improvement(base, new)?;
            let note = match s.reported {
                Some(r) if s.approximate => Some(format!("reported as roughly {r:.0}%")),
                Some(r) if (r - percent).abs() > 0.05 => Some(format!("reported as {r:.1}%")),
                _ => None,
            };
            Ok(Improvement { label: s.label.clone(), base, new, percent, base_ref, new_ref, note })
        })
        .collect()
}

/// Compare computed per-language cells and means against the fixture. Unstated
/// fixture cells and missing computed cells are skipped.
pub fn regression_check(bundle: &ReportBundle, fixture: &ReferenceFixture, tol: f64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for row in &bundle.per_language_table {
        for cell in &row.cells {
            let Some(auc) = cell.auc else { continue };
            let Some(f) = fixture.matrix.iter().find(|f| f.config == row.config && f.language == cell.language) else {
                continue;
            };
            let Some(expected) = f.value else { continue };
            out.push(check(format!("{}/{}", row.config, cell.language), auc, expected, tol, &f.source));
        }
    }
    for row in &bundle.summary_table {
        let (Some(mean), Some(f)) = (row.mean, fixture.average(&row.config)) else { continue };
        out.push(check(format!("{}/mean", row.config), mean, f.value, tol, &f.source));
    }
    out
}

fn check(cell: String, computed: f64, expected: f64, tolerance: f64, source: &str) -> CheckResult {
    CheckResult {
        cell,
        computed,
        expected,
        tolerance,
        pass: (computed - expected).abs() <= tolerance + 1e-12,
        source: source.to_string(),
    }
}

/// The bundle implied by the fixture alone, with its self-consistency checks.
pub fn fixture_bundle(fixture: &ReferenceFixture, tol: f64) -> Result<ReportBundle, ReportError> {
    let matrix = fixture.transfer_matrix();
    let improvements = improvements_report(&fixture.improvements, |id| {
        fixture.get(id).map(|v| (v, format!("fixture:{id}")))
    })?;
    let mut bundle = ReportBundle {
        title: "Reference results".into(),
        summary_table: summary_table(&matrix),
        per_language_table: per_language_table(&matrix),
        improvements,
        checks: Vec::new(),
        provenance: BundleProvenance { fixture_id: Some(fixture.fixture_id.clone()), ..Default::default() },
    };
    bundle.checks = regression_check(&bundle, fixture, tol);
    Ok(bundle)
}

/// Bundle for a set of runs: matrix over `model_config` × language.
pub fn runs_bundle(title: &str, runs: &[EvalRun], improvements: Vec<Improvement>) -> Result<ReportBundle, ReportError> {
    let matrix = crate::grading::transfer_matrix(runs)?;
    let mut run_ids: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();
    run_ids.sort();
    let hashes: std::collections::BTreeSet<String> = runs.iter().map(|r| r.dataset_hash.clone()).collect();
    Ok(ReportBundle {
        title: title.to_string(),
        summary_table: summary_table(&matrix),
        per_language_table: per_language_table(&matrix),
        improvements,
        checks: Vec::new(),
        provenance: BundleProvenance { run_ids, dataset_hashes: hashes.into_iter().collect(), fixture_id: None },
    })
}

/// Lookup over runs keyed `{model_config}.{mode}.{language}` for [`improvements_report`].
pub fn run_lookup(runs: &[EvalRun]) -> impl Fn(&str) -> Option<(f64, String)> + '_ {
    let index: BTreeMap<String, &EvalRun> =
        runs.iter().map(|r| (format!("{}.{}.{}", r.model_config, r.mode, r.language), r)).collect();
    move |key| index.get(key).map(|r| (r.auc, r.run_id.clone()))
}
