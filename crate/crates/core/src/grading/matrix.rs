use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalRun, GradingError};
use crate::corpus::Language;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub auc: f64,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub config: String,
    /// `None` marks a missing cell.
    pub cells: BTreeMap<Language, Option<MatrixCell>>,
    /// Mean over present cells; `None` when the row is empty.
    pub mean: Option<f64>,
}

impl MatrixRow {
    pub fn is_complete(&self) -> bool {
        self.cells.values().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TransferMatrix {
    pub rows: Vec<MatrixRow>,
}

impl TransferMatrix {
    pub fn row(&self, config: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn cell(&self, config: &str, language: Language) -> Option<&MatrixCell> {
        self.row(config)?.cells.get(&language)?.as_ref()
    }

    /// Build from explicit `(config, language, auc, provenance)` values.
    pub fn from_cells<'a>(
        cells: impl IntoIterator<Item = (&'a str, Language, f64, String)>,
    ) -> Result<Self, GradingError> {
        let mut order: Vec<String> = Vec::new();
        let mut grid: BTreeMap<String, BTreeMap<Language, MatrixCell>> = BTreeMap::new();
        for (config, language, auc, run_id) in cells {
            if !grid.contains_key(config) {
                order.push(config.to_string());
            }
            let row = grid.entry(config.to_string()).or_default();
            if row.insert(language, MatrixCell { auc, run_id }).is_some() {
                return Err(GradingError::DuplicateCell { config: config.to_string(), language });
            }
        }
        let rows = order
            .into_iter()
            .map(|config| {
                let present = grid.remove(&config).unwrap_or_default();
                let values: Vec<f64> = present.values().map(|c| c.auc).collect();
                let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
                let cells = Language::ALL.iter().map(|l| (*l, present.get(l).cloned())).collect();
                MatrixRow { config, cells, mean }
            })
            .collect();
        Ok(Self { rows })
    }
}

/// Arrange runs as model configuration × language, rows in first-seen order.
pub fn transfer_matrix(runs: &[EvalRun]) -> Result<TransferMatrix, GradingError> {
    TransferMatrix::from_cells(
        runs.iter()
            .map(|r| (r.model_config.as_str(), r.language, r.auc, r.run_id.clone())),
    )
}

/// `100 · (new − base) / base`, rounded to one decimal.
pub fn relative_improvement(base_auc: f64, new_auc: f64) -> Result<f64, GradingError> {
    if !(base_auc > 0.0) {
        return Err(GradingError::NonPositiveBase(base_auc));
    }
    let pct = 100.0 * (new_auc - base_auc) / base_auc;
    Ok((pct * 10.0).round() / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(config: &str, values: &[(Language, f64)]) -> TransferMatrix {
        TransferMatrix::from_cells(values.iter().map(|(l, v)| (config, *l, *v, format!("{config}-{l}")))).unwrap()
    }

    #[test]
    fn baseline_row_mean() {
        let m = row("baseline", &[(Language::En, 0.895), (Language::Es, 0.830), (Language::Cs, 0.740)]);
        let mean = m.row("baseline").unwrap().mean.unwrap();
        assert!((mean - 0.822).abs() < 5e-4);
    }

    #[test]
    fn english_ft_row_mean() {
        let m = row("en", &[(Language::En, 0.964), (Language::Es, 0.926), (Language::Cs, 0.766)]);
        assert!((m.row("en").unwrap().mean.unwrap() - 0.885).abs() < 5e-4);
    }

    #[test]
    fn single_cell_row() {
        let m = row("x", &[(Language::Es, 0.7)]);
        let r = m.row("x").unwrap();
        assert_eq!(r.mean, Some(0.7));
        assert!(!r.is_complete());
        assert!(r.cells[&Language::En].is_none());
    }

    #[test]
    fn duplicate_cell_rejected() {
        let err = TransferMatrix::from_cells(vec![
            ("a", Language::En, 0.5, "r1".to_string()),
            ("a", Language::En, 0.6, "r2".to_string()),
        ])
        .unwrap_err();
        assert!(matches!(err, GradingError::DuplicateCell { .. }));
    }

    #[test]
    fn improvements() {
        assert_eq!(relative_improvement(0.74, 0.94).unwrap(), 27.0);
        assert_eq!(relative_improvement(0.69, 0.95).unwrap(), 37.7);
        assert_eq!(relative_improvement(0.8, 0.8).unwrap(), 0.0);
        assert!(relative_improvement(0.0, 0.5).is_err());
        assert!(relative_improvement(-0.1, 0.5).is_err());
    }
}
