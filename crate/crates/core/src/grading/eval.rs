use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{auc, score_item, GradingError, GradingMode, ModeKind, ScoringStrategy, StrategyKind, Verdict};
use crate::corpus::{DatasetView, Label, Language};
use crate::modelio::{map_bounded, Backend};
use crate::util::sha256_hex;

/// Share of items allowed to fail at the backend before a run is abandoned.
pub const MAX_BACKEND_ERROR_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub label: Label,
    pub score: f64,
    pub verdict: Verdict,
    /// Strategy that produced this score; `None` when the backend call failed.
    pub strategy: Option<StrategyKind>,
}

/// Scores, verdicts and AUC for one (model configuration, mode, language) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub backend_id: String,
    pub model: String,
    /// Row label in result tables, e.g. `baseline` or `cs`.
    pub model_config: String,
    pub mode: ModeKind,
    pub strategy_requested: StrategyKind,
    /// Most degraded strategy any item needed.
    pub strategy_applied: StrategyKind,
    pub language: Language,
    pub auc: f64,
    pub item_scores: Vec<ItemScore>,
    pub seed: u64,
    pub dataset_hash: String,
    pub parse_failures: usize,
    pub backend_errors: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplar_ids: Vec<String>,
}

impl EvalRun {
    pub fn recompute_auc(&self) -> Result<f64, GradingError> {
        let scores: Vec<f64> = self.item_scores.iter().map(|s| s.score).collect();
        let labels: Vec<bool> = self.item_scores.iter().map(|s| s.label.is_positive()).collect();
        auc(&scores, &labels)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("runs serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), GradingError> {
        crate::util::write_if_changed(path, self.to_json().as_bytes())
            .map(|_| ())
            .map_err(|e| GradingError::RunFile { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, GradingError> {
        let err = |message: String| GradingError::RunFile { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Every `*.json` run in `dir`, sorted by run_id.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, GradingError> {
        let err = |message: String| GradingError::RunFile { path: dir.display().to_string(), message };
        let mut runs = Vec::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| err(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            runs.push(Self::load(&p)?);
        }
        runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(runs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub seed: u64,
    pub max_in_flight: usize,
    pub model_config: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 0, max_in_flight: 4, model_config: "baseline".into() }
    }
}

/// Score every item of a single-language view and compute its AUC.
///
/// Parse failures score 0.5 and stay in the run. Items whose backend call fails
/// are also scored 0.5 and counted; more than 5% of them aborts the run.
pub fn evaluate_dataset(
    backend: &dyn Backend,
    view: &DatasetView,
    mode: &GradingMode,
    strategy: ScoringStrategy,
    options: &EvalOptions,
) -> Result<EvalRun, GradingError> {
    mode.validate()?;
    if view.is_empty() {
        return Err(GradingError::EmptyDataset);
    }
    let language = view.language().ok_or(GradingError::MixedLanguages)?;
    if let Some(leak) = view.items.iter().find(|i| mode.uses_item(i)) {
        return Err(GradingError::ExemplarLeak(leak.item_id.clone()));
    }

    let results = map_bounded(&view.items, options.max_in_flight, |_, item| {
        score_item(backend, item, mode, strategy, Some(options.seed))
    });

    let mut item_scores = Vec::with_capacity(view.len());
    let mut backend_errors = 0;
    for (item, result) in view.items.iter().zip(results) {
        let (score, verdict, strategy) = match result {
            Ok((s, v, k)) => (s, v, Some(k)),
            Err(GradingError::Backend { item_id, source }) => {
                log::warn!("{item_id}: {source}");
                backend_errors += 1;
                (0.5, Verdict::ParseFailure, None)
            }
            Err(other) => return Err(other),
        };
        item_scores.push(ItemScore { item_id: item.item_id.clone(), label: item.label, score, verdict, strategy });
    }
    if backend_errors as f64 > MAX_BACKEND_ERROR_SHARE * view.len() as f64 {
        return Err(GradingError::TooManyBackendErrors { failed: backend_errors, total: view.len() });
    }

    let scores: Vec<f64> = item_scores.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = item_scores.iter().map(|s| s.label.is_positive()).collect();
    let auc = auc(&scores, &labels)?;
    let strategy_applied = item_scores
        .iter()
        .filter_map(|s| s.strategy)
        .max()
        .unwrap_or(StrategyKind::HardVerdict);
    let parse_failures = item_scores
        .iter()
        .filter(|s| s.verdict == Verdict::ParseFailure && s.strategy.is_some())
        .count();
    let dataset_hash = view.content_hash();
    let exemplar_ids: Vec<String> = mode.exemplars.iter().filter_map(|e| e.source_item_id.clone()).collect();

    let identity = serde_json::json!({
        "backend": backend.backend_id(),
        "model": backend.model(),
        "config": options.model_config,
        "mode": mode,
        "strategy": strategy,
        "language": language,
        "dataset": dataset_hash,
        "seed": options.seed,
    });
    let run_id = format!(
        "{}-{}-{}-{}",
        options.model_config,
        mode.kind,
        language,
        &sha256_hex(identity.to_string().as_bytes())[..10]
    );

    Ok(EvalRun {
        run_id,
        backend_id: backend.backend_id().to_string(),
        model: backend.model().to_string(),
        model_config: options.model_config.clone(),
        mode: mode.kind,
        strategy_requested: strategy.kind,
        strategy_applied,
        language,
        auc,
        item_scores,
        seed: options.seed,
        dataset_hash,
        parse_failures,
        backend_errors,
        exemplar_ids,
    })
}
