use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GateThresholds;
use crate::corpus::{Label, Language, ParallelGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationClass {
    LengthParity,
    LabelBalance,
    TopicRepetition,
    MultiSentence,
    Unparseable,
    Translation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    LengthParity { scope: String, acceptable_mean: f64, unacceptable_mean: f64, ratio: f64, limit: f64 },
    LabelBalance { acceptable: usize, unacceptable: usize, minority_share: f64, limit: f64 },
    TopicRepetition { topic: String, count: usize, limit: usize },
    MultiSentence { group_id: String, terminal_marks: usize },
    Unparseable { message: String },
    Translation { message: String },
}

impl Violation {
    pub fn class(&self) -> ViolationClass {
        match self {
            Violation::LengthParity { .. } => ViolationClass::LengthParity,
            Violation::LabelBalance { .. } => ViolationClass::LabelBalance,
            Violation::TopicRepetition { .. } => ViolationClass::TopicRepetition,
            Violation::MultiSentence { .. } => ViolationClass::MultiSentence,
            Violation::Unparseable { .. } => ViolationClass::Unparseable,
            Violation::Translation { .. } => ViolationClass::Translation,
        }
    }

    /// One-line description, also used verbatim in re-prompts.
    pub fn describe(&self) -> String {
        match self {
            Violation::LengthParity { scope, acceptable_mean, unacceptable_mean, ratio, limit } => format!(
                "{scope} answer lengths are unbalanced: acceptable answers average {acceptable_mean:.1} words, \
                 unacceptable answers {unacceptable_mean:.1} words (ratio {ratio:.2}, limit {limit:.2})"
            ),
            Violation::LabelBalance { acceptable, unacceptable, minority_share, limit } => format!(
                "labels are unbalanced: {acceptable} Acceptable vs {unacceptable} Unacceptable \
                 (minority share {minority_share:.2}, minimum {limit:.2})"
            ),
            Violation::TopicRepetition { topic, count, limit } => {
                format!("topic \"{topic}\" would appear {count} times (limit {limit}); choose new topics")
            }
            Violation::MultiSentence { group_id, terminal_marks } => {
                format!("answer {group_id} has {terminal_marks} sentences; every answer must be a single sentence")
            }
            Violation::Unparseable { message } => format!("the output could not be parsed: {message}"),
            Violation::Translation { message } => format!("translation rejected: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStage {
    Generation,
    Translation(Language),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub batch_id: String,
    pub stage: GateStage,
    pub attempt: u32,
    pub pass: bool,
    pub violations: Vec<Violation>,
}

impl GateReport {
    pub fn classes(&self) -> Vec<ViolationClass> {
        let mut c: Vec<_> = self.violations.iter().map(Violation::class).collect();
        c.sort();
        c.dedup();
        c
    }
}

/// Sentence-ending punctuation runs (`.`, `!`, `?`) followed by whitespace or the end.
pub fn terminal_marks(text: &str) -> usize {
    let chars: Vec<char> = text.trim().chars().collect();
    let mut count = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut j = i;
            while j + 1 < chars.len() && matches!(chars[j + 1], '.' | '!' | '?') {
                j += 1;
            }
            if j + 1 == chars.len() || chars[j + 1].is_whitespace() {
                count += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

fn topic_key(topic: &str) -> String {
    topic.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn mean_lengths<'a>(groups: impl Iterator<Item = &'a ParallelGroup>) -> (Option<f64>, Option<f64>) {
    let mut sums: BTreeMap<Label, (usize, usize)> = BTreeMap::new();
    for g in groups {
        let len = g.answer(Language::En).map(|a| a.split_whitespace().count()).unwrap_or(0);
        let e = sums.entry(g.label).or_default();
        e.0 += len;
        e.1 += 1;
    }
    let mean = |l: Label| sums.get(&l).map(|(s, n)| *s as f64 / *n as f64);
    (mean(Label::Acceptable), mean(Label::Unacceptable))
}

fn length_check(scope: &str, acc: Option<f64>, unacc: Option<f64>, limit: f64) -> Option<Violation> {
    let (a, u) = (acc?, unacc?);
    let ratio = if a.min(u) > 0.0 { a.max(u) / a.min(u) } else { f64::INFINITY };
    (ratio > limit).then(|| Violation::LengthParity {
        scope: scope.to_string(),
        acceptable_mean: a,
        unacceptable_mean: u,
        ratio,
        limit,
    })
}

/// Check an English batch against the thresholds and the corpus accepted so far.
/// Never fails; an empty batch is reported as unparseable.
pub fn quality_gate(
    batch: &[ParallelGroup],
    thresholds: &GateThresholds,
    corpus_so_far: &[ParallelGroup],
) -> GateReport {
    let mut violations = Vec::new();
    if batch.is_empty() {
        violations.push(Violation::Unparseable { message: "the batch is empty".into() });
    }

    let (a, u) = mean_lengths(batch.iter());
    if let Some(v) = length_check("batch", a, u, thresholds.max_length_ratio) {
        violations.push(v);
    } else if !corpus_so_far.is_empty() {
        let (a, u) = mean_lengths(corpus_so_far.iter().chain(batch));
        violations.extend(length_check("corpus", a, u, thresholds.max_length_ratio));
    }

    if !batch.is_empty() {
        let acceptable = batch.iter().filter(|g| g.label == Label::Acceptable).count();
        let unacceptable = batch.len() - acceptable;
        let minority_share = acceptable.min(unacceptable) as f64 / batch.len() as f64;
        // a single item cannot be balanced on its own
        if batch.len() > 1 && minority_share < thresholds.min_label_balance {
            violations.push(Violation::LabelBalance {
                acceptable,
                unacceptable,
                minority_share,
                limit: thresholds.min_label_balance,
            });
        }
    }

    let mut topic_counts: BTreeMap<String, usize> = BTreeMap::new();
    for g in corpus_so_far {
        *topic_counts.entry(topic_key(&g.topic)).or_default() += 1;
    }
    let mut batch_topics: Vec<String> = Vec::new();
    for g in batch {
        let key = topic_key(&g.topic);
        *topic_counts.entry(key.clone()).or_default() += 1;
        if !batch_topics.contains(&key) {
            batch_topics.push(key);
        }
    }
    for topic in batch_topics {
        let count = topic_counts[&topic];
        if count > thresholds.max_topic_repeats {
            violations.push(Violation::TopicRepetition { topic, count, limit: thresholds.max_topic_repeats });
        }
    }

    for g in batch {
        let marks = g.answer(Language::En).map(terminal_marks).unwrap_or(0);
        if marks > 1 {
            violations.push(Violation::MultiSentence { group_id: g.group_id.clone(), terminal_marks: marks });
        }
    }

    GateReport {
        batch_id: batch.first().map(|g| g.provenance.batch_id.clone()).unwrap_or_default(),
        stage: GateStage::Generation,
        attempt: 0,
        pass: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnswerVariant, Provenance, Subject};

    fn g(id: &str, label: Label, words: usize, topic: &str) -> ParallelGroup {
        let answer = format!("{}.", vec!["word"; words].join(" "));
        ParallelGroup {
            group_id: id.into(),
            subject: Subject::Science,
            grade: 7,
            topic: topic.into(),
            question: "Q?".into(),
            label,
            variants: [(Language::En, AnswerVariant::new(answer))].into_iter().collect(),
            provenance: Provenance { generator_id: "t".into(), batch_id: "b".into() },
        }
    }

    fn batch(acc_len: usize, unacc_len: usize, n_acc: usize, n_unacc: usize, topic_prefix: &str) -> Vec<ParallelGroup> {
        let mut out = Vec::new();
        for i in 0..n_acc {
            out.push(g(&format!("a{i}"), Label::Acceptable, acc_len, &format!("{topic_prefix}{i}")));
        }
        for i in 0..n_unacc {
            out.push(g(&format!("u{i}"), Label::Unacceptable, unacc_len, &format!("{topic_prefix}u{i}")));
        }
        out
    }

    #[test]
    fn balanced_fresh_batch_passes() {
        let r = quality_gate(&batch(14, 13, 5, 5, "t"), &GateThresholds::default(), &[]);
        assert!(r.pass, "{:?}", r.violations);
    }

    #[test]
    fn length_ratio_violation() {
        let r = quality_gate(&batch(20, 8, 5, 5, "t"), &GateThresholds::default(), &[]);
        assert!(!r.pass);
        assert_eq!(r.classes(), vec![ViolationClass::LengthParity]);
        match &r.violations[0] {
            Violation::LengthParity { ratio, .. } => assert!((ratio - 2.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fourth_batch_on_same_topic_fails() {
        let th = GateThresholds::default();
        let mut corpus = Vec::new();
        for k in 0..3 {
            let mut b = batch(10, 10, 5, 5, &format!("k{k}-"));
            b[0].topic = "Photosynthesis".into();
            let r = quality_gate(&b, &th, &corpus);
            assert!(r.pass, "batch {k}: {:?}", r.violations);
            corpus.extend(b);
        }
        let mut b = batch(10, 10, 5, 5, "k3-");
        b[0].topic = "photosynthesis ".into();
        let r = quality_gate(&b, &th, &corpus);
        assert_eq!(r.classes(), vec![ViolationClass::TopicRepetition]);
    }

    #[test]
    fn label_skew_fails() {
        let r = quality_gate(&batch(10, 10, 9, 1, "t"), &GateThresholds::default(), &[]);
        assert_eq!(r.classes(), vec![ViolationClass::LabelBalance]);
    }

    #[test]
    fn multi_sentence_answer_fails() {
        let mut b = batch(10, 10, 5, 5, "t");
        b[2].variants.get_mut(&Language::En).unwrap().answer = "It rains. Then it dries.".into();
        let r = quality_gate(&b, &GateThresholds::default(), &[]);
        assert!(r.classes().contains(&ViolationClass::MultiSentence));
    }

    #[test]
    fn terminal_mark_counting() {
        assert_eq!(terminal_marks("One sentence."), 1);
        assert_eq!(terminal_marks("No mark"), 0);
        assert_eq!(terminal_marks("Water boils at 100.5 degrees."), 1);
        assert_eq!(terminal_marks("Really?! Yes."), 2);
        assert_eq!(terminal_marks("Wait... what?"), 2);
    }

    #[test]
    fn empty_batch_is_reported_not_thrown() {
        let r = quality_gate(&[], &GateThresholds::default(), &[]);
        assert!(!r.pass);
    }
}
