use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetView, Label, Subject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub label_counts: BTreeMap<Label, usize>,
    /// Mean whitespace-token answer length; absent for a label with no items.
    pub mean_answer_tokens: BTreeMap<Label, f64>,
    pub subject_counts: BTreeMap<Subject, usize>,
    pub distinct_topics: usize,
    /// Keyed `subject/grade-N/label`.
    pub stratum_counts: BTreeMap<String, usize>,
}

pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn corpus_stats(view: &DatasetView) -> Result<CorpusStats, CorpusError> {
    if view.is_empty() {
        return Err(CorpusError::EmptyView);
    }
    let mut label_counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|l| (*l, 0)).collect();
    let mut token_sums: BTreeMap<Label, usize> = BTreeMap::new();
    let mut subject_counts: BTreeMap<Subject, usize> = Subject::ALL.iter().map(|s| (*s, 0)).collect();
    let mut topics = BTreeSet::new();
    let mut stratum_counts = BTreeMap::new();
    for item in &view.items {
        *label_counts.entry(item.label).or_default() += 1;
        *token_sums.entry(item.label).or_default() += whitespace_tokens(&item.answer);
        *subject_counts.entry(item.subject).or_default() += 1;
        topics.insert(item.topic.trim().to_lowercase());
        *stratum_counts
            .entry(format!("{}/grade-{}/{}", item.subject, item.grade, item.label))
            .or_default() += 1;
    }
    let mean_answer_tokens = token_sums
        .into_iter()
        .map(|(l, sum)| (l, sum as f64 / label_counts[&l] as f64))
        .collect();
    Ok(CorpusStats {
        total: view.len(),
        label_counts,
        mean_answer_tokens,
        subject_counts,
        distinct_topics: topics.len(),
        stratum_counts,
    })
}
