use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationError, RatingStore, ReviewAssignment, Task};

/// Third-party resolutions: item id → metric → value.
pub type Adjudication = BTreeMap<String, BTreeMap<String, u8>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub per_annotator: BTreeMap<String, usize>,
    pub shared: usize,
    pub unique: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub item_id: String,
    pub metric: String,
    pub values: BTreeMap<String, u8>,
    /// Value used in the pooled score.
    pub resolved: u8,
    pub adjudicated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub task: Task,
    /// annotator → metric → mean value over that annotator's items.
    pub per_annotator: BTreeMap<String, BTreeMap<String, f64>>,
    /// metric → share of shared items with identical values. Absent without shared items.
    pub pairwise_overlap: BTreeMap<String, f64>,
    /// metric → mean over unique items, disagreements resolved.
    pub pooled: BTreeMap<String, f64>,
    pub coverage: Coverage,
    pub disagreements: Vec<Disagreement>,
}

/// Compare two annotators' latest ratings over their assignments.
///
/// Disagreements on shared items take the adjudicated value when one is given,
/// otherwise 0.
pub fn agreement_metrics(
    store: &RatingStore,
    assignments: &[ReviewAssignment; 2],
    adjudication: Option<&Adjudication>,
) -> Result<AgreementReport, AnnotationError> {
    let [a, b] = assignments;
    if a.task != b.task || a.annotator_id == b.annotator_id {
        return Err(AnnotationError::MismatchedAssignments);
    }
    a.validate()?;
    b.validate()?;
    let task = a.task;

    let mut unrated = Vec::new();
    for asg in assignments {
        for item in &asg.item_ids {
            if store.latest(&asg.annotator_id, task, item).is_none() {
                unrated.push((asg.annotator_id.clone(), item.clone()));
            }
        }
    }
    if !unrated.is_empty() {
        return Err(AnnotationError::Unrated(unrated));
    }
    let value = |who: &str, item: &str, metric: &str| -> u8 {
        store.latest(who, task, item).map(|r| r.values[metric]).expect("checked above")
    };

    let mut per_annotator = BTreeMap::new();
    for asg in assignments {
        let means = task
            .metrics()
            .iter()
            .map(|m| {
                let sum: u32 = asg.item_ids.iter().map(|i| value(&asg.annotator_id, i, m) as u32).sum();
                (m.to_string(), sum as f64 / asg.item_ids.len().max(1) as f64)
            })
            .collect();
        per_annotator.insert(asg.annotator_id.clone(), means);
    }

    let shared: Vec<&String> = a.item_ids.iter().filter(|i| b.contains(i)).collect();
    let unique: BTreeSet<&String> = a.item_ids.iter().chain(&b.item_ids).collect();

    let mut pairwise_overlap = BTreeMap::new();
    let mut pooled = BTreeMap::new();
    let mut disagreements = Vec::new();
    for metric in task.metrics() {
        if !shared.is_empty() {
            let same = shared
                .iter()
                .filter(|i| value(&a.annotator_id, i, metric) == value(&b.annotator_id, i, metric))
                .count();
            pairwise_overlap.insert(metric.to_string(), same as f64 / shared.len() as f64);
        }
        let mut total = 0u32;
        for item in &unique {
            let va = a.contains(item).then(|| value(&a.annotator_id, item, metric));
            let vb = b.contains(item).then(|| value(&b.annotator_id, item, metric));
            let v = match (va, vb) {
                (Some(x), Some(y)) if x != y => {
                    let adjudicated = adjudication.and_then(|adj| adj.get(*item)?.get(*metric).copied());
                    let resolved = adjudicated.unwrap_or(0);
                    disagreements.push(Disagreement {
                        item_id: item.to_string(),
                        metric: metric.to_string(),
                        values: BTreeMap::from([(a.annotator_id.clone(), x), (b.annotator_id.clone(), y)]),
                        resolved,
                        adjudicated: adjudicated.is_some(),
                    });
                    resolved
                }
                (Some(x), _) | (None, Some(x)) => x,
                (None, None) => unreachable!("unique items come from the assignments"),
            };
            total += v as u32;
        }
        pooled.insert(metric.to_string(), total as f64 / unique.len().max(1) as f64);
    }

    Ok(AgreementReport {
        task,
        per_annotator,
        pairwise_overlap,
        pooled,
        coverage: Coverage {
            per_annotator: assignments.iter().map(|x| (x.annotator_id.clone(), x.item_ids.len())).collect(),
            shared: shared.len(),
            unique: unique.len(),
        },
        disagreements,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceThresholds {
    pub min_accurateness: f64,
    pub min_naturalness: f64,
    pub min_label_correctness: f64,
}

impl Default for AcceptanceThresholds {
    fn default() -> Self {
        Self { min_accurateness: 0.95, min_naturalness: 0.95, min_label_correctness: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accept: bool,
    pub reasons: Vec<String>,
}

/// Accept iff every pooled metric present in `reports` meets its threshold.
pub fn acceptance_decision(reports: &[AgreementReport], thresholds: &AcceptanceThresholds) -> Decision {
    let mut reasons = Vec::new();
    for report in reports {
        for (metric, value) in &report.pooled {
            let min = match metric.as_str() {
                "agree" => thresholds.min_label_correctness,
                "accurateness" => thresholds.min_accurateness,
                "naturalness" => thresholds.min_naturalness,
                _ => continue,
            };
            if *value < min {
                reasons.push(format!("{metric} {value:.3} is below {min:.3}"));
            }
        }
    }
    Decision { accept: reasons.is_empty(), reasons }
}

#[cfg(test)]
mod tests {
    use super::super::testing::rating;
    use super::super::make_translation_assignments;
    use super::*;

    fn label_fixture(zeros_a: &[usize], zeros_b: &[usize]) -> (RatingStore, [ReviewAssignment; 2]) {
        let ids: Vec<String> = (0..100).map(|i| format!("i{i:03}")).collect();
        let mk = |who: &str| ReviewAssignment {
            task: Task::LabelCheck,
            annotator_id: who.into(),
            item_ids: ids.clone(),
            overlap_ids: ids.clone(),
        };
        let assignments = [mk("A"), mk("B")];
        let mut store = RatingStore::new(assignments.to_vec());
        for (k, id) in ids.iter().enumerate() {
            store.record_rating(rating("A", id, Task::LabelCheck, &[("agree", u8::from(!zeros_a.contains(&k)))])).unwrap();
            store.record_rating(rating("B", id, Task::LabelCheck, &[("agree", u8::from(!zeros_b.contains(&k)))])).unwrap();
        }
        (store, assignments)
    }

    #[test]
    fn label_overlap_97() {
        let (store, asg) = label_fixture(&[0], &[1, 2]);
        let r = agreement_metrics(&store, &asg, None).unwrap();
        assert!((r.pairwise_overlap["agree"] - 0.97).abs() < 1e-12);
        assert!((r.per_annotator["A"]["agree"] - 0.99).abs() < 1e-12);
        assert_eq!(r.coverage.unique, 100);
        assert_eq!(r.disagreements.len(), 3);
        assert!((r.pooled["agree"] - 0.97).abs() < 1e-12);
    }

    #[test]
    fn adjudication_overrides_conservative_default() {
        let (store, asg) = label_fixture(&[0], &[]);
        let adj: Adjudication = BTreeMap::from([("i000".to_string(), BTreeMap::from([("agree".to_string(), 1)]))]);
        let r = agreement_metrics(&store, &asg, Some(&adj)).unwrap();
        assert_eq!(r.pooled["agree"], 1.0);
        assert!(r.disagreements[0].adjudicated);
    }

    #[test]
    fn identical_ratings_agree_fully() {
        let (store, asg) = label_fixture(&[4, 5], &[4, 5]);
        let r = agreement_metrics(&store, &asg, None).unwrap();
        assert_eq!(r.pairwise_overlap["agree"], 1.0);
    }

    #[test]
    fn unrated_items_listed() {
        let ids: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
        let asg = make_translation_assignments(&ids, 4, 2, 0, ["A", "B"]).unwrap();
        let mut store = RatingStore::new(asg.to_vec());
        let first = asg[0].item_ids[0].clone();
        store
            .record_rating(rating("A", &first, Task::TranslationCheck, &[("accurateness", 1), ("naturalness", 1)]))
            .unwrap();
        match agreement_metrics(&store, &asg, None) {
            Err(AnnotationError::Unrated(missing)) => assert_eq!(missing.len(), 7),
            other => panic!("{other:?}"),
        }
    }

    fn report(pooled: &[(&str, f64)]) -> AgreementReport {
        AgreementReport {
            task: Task::TranslationCheck,
            per_annotator: BTreeMap::new(),
            pairwise_overlap: BTreeMap::new(),
            pooled: pooled.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            coverage: Coverage { per_annotator: BTreeMap::new(), shared: 0, unique: 0 },
            disagreements: vec![],
        }
    }

    #[test]
    fn acceptance() {
        let th = AcceptanceThresholds::default();
        assert!(acceptance_decision(&[report(&[("accurateness", 0.967), ("naturalness", 0.987)])], &th).accept);
        let d = acceptance_decision(&[report(&[("accurateness", 0.90), ("naturalness", 0.987)])], &th);
        assert!(!d.accept);
        assert!(d.reasons[0].contains("accurateness"));
        let zero = AcceptanceThresholds { min_accurateness: 0.0, min_naturalness: 0.0, min_label_correctness: 0.0 };
        assert!(acceptance_decision(&[report(&[("accurateness", 0.0), ("naturalness", 0.0)])], &zero).accept);
    }
}
