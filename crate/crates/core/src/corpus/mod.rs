//! Canonical data model and persistence for parallel graded Q&A corpora.
//!
//! A [`ParallelGroup`] is one question with an English answer and, once translated,
//! aligned Spanish and Spanglish renderings of the same answer. Everything downstream
//! works on flat per-language [`DatasetView`]s derived from groups.

mod mix;
mod split;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use mix::{compose_mix, MixSpec};
pub use split::{make_splits, Split, SplitAssignment, SplitSizes, Stratum};
pub use stats::{corpus_stats, CorpusStats};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("{}group `{group_id}`: invalid field `{field}`: {reason}", line_prefix(*.line))]
    Invariant {
        line: Option<usize>,
        group_id: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate group_id `{0}`")]
    DuplicateGroup(String),
    #[error("duplicate item_id `{0}`")]
    DuplicateItem(String),
    #[error("requested split sizes total {requested} but only {available} groups exist")]
    InsufficientGroups { requested: usize, available: usize },
    #[error("cannot balance {split} split: stratum {stratum} has too few groups")]
    DeficientStratum { split: Split, stratum: String },
    #[error("mix requests {requested} `{language}` items but only {available} are available")]
    MixShortfall {
        language: Language,
        requested: usize,
        available: usize,
    },
    #[error("invalid mix spec: {0}")]
    InvalidMix(String),
    #[error("cannot compute statistics over an empty view")]
    EmptyView,
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Science,
    SocialScience,
}

impl Subject {
    pub const ALL: [Subject; 2] = [Subject::Science, Subject::SocialScience];

    pub fn as_str(self) -> &'static str {
        match self {
            Subject::Science => "science",
            Subject::SocialScience => "social_science",
        }
    }

    /// Human-readable name used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Subject::Science => "Science",
            Subject::SocialScience => "Social Science",
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Acceptable,
    Unacceptable,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Acceptable, Label::Unacceptable];

    /// The one-word verdict graders are asked to produce.
    pub fn verdict_word(self) -> &'static str {
        match self {
            Label::Acceptable => "Acceptable",
            Label::Unacceptable => "Unacceptable",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Acceptable
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Acceptable => "acceptable",
            Label::Unacceptable => "unacceptable",
        })
    }
}

/// Answer language. `Cs` is English/Spanish code-switched text (Spanglish).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    En,
    Es,
    Cs,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::En, Language::Es, Language::Cs];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Es => "es",
            Language::Cs => "cs",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Language::En => "English",
            Language::Es => "Spanish",
            Language::Cs => "Spanglish",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "es" => Ok(Language::Es),
            "cs" => Ok(Language::Cs),
            other => Err(format!("unknown language `{other}` (expected en, es or cs)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerVariant {
    pub answer: String,
    /// Spanish-token share; only carried by the `cs` variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_ratio: Option<f64>,
}

impl AnswerVariant {
    pub fn new(answer: impl Into<String>) -> Self {
        Self {
            answer: answer.into(),
            mix_ratio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator_id: String,
    pub batch_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelGroup {
    pub group_id: String,
    pub subject: Subject,
    pub grade: u8,
    pub topic: String,
    pub question: String,
    pub label: Label,
    pub variants: BTreeMap<Language, AnswerVariant>,
    pub provenance: Provenance,
}

pub const MIN_GRADE: u8 = 6;
pub const MAX_GRADE: u8 = 10;

impl ParallelGroup {
    pub fn answer(&self, language: Language) -> Option<&str> {
        self.variants.get(&language).map(|v| v.answer.as_str())
    }

    /// Check the group's invariants. Errors name the offending field.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |field: &'static str, reason: String| CorpusError::Invariant {
            line: None,
            group_id: self.group_id.clone(),
            field,
            reason,
        };
        if self.group_id.trim().is_empty() {
            return Err(fail("group_id", "must be non-empty".into()));
        }
        if !(MIN_GRADE..=MAX_GRADE).contains(&self.grade) {
            return Err(fail(
                "grade",
                format!("{} is outside {MIN_GRADE}..={MAX_GRADE}", self.grade),
            ));
        }
        if self.question.trim().is_empty() {
            return Err(fail("question", "must be non-empty".into()));
        }
        if !self.variants.contains_key(&Language::En) {
            return Err(fail("variants", "missing the `en` variant".into()));
        }
        for (lang, variant) in &self.variants {
            if variant.answer.trim().is_empty() {
                return Err(fail("answer", format!("`{lang}` answer is empty")));
            }
            match (lang, variant.mix_ratio) {
                (Language::Cs, Some(r)) if !(0.0..=1.0).contains(&r) => {
                    return Err(fail("mix_ratio", format!("{r} is outside [0, 1]")));
                }
                (Language::En | Language::Es, Some(_)) => {
                    return Err(fail("mix_ratio", format!("only the cs variant may carry one, found on `{lang}`")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// NFC-normalise every text field in place.
    pub fn normalize(&mut self) {
        for s in [
            &mut self.group_id,
            &mut self.topic,
            &mut self.question,
            &mut self.provenance.generator_id,
            &mut self.provenance.batch_id,
        ] {
            *s = nfc(s);
        }
        for v in self.variants.values_mut() {
            v.answer = nfc(&v.answer);
        }
    }
}

pub(crate) fn nfc(s: &str) -> String {
    s.nfc().collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read a JSONL corpus. Lines are 1-based in errors; blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<ParallelGroup>, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut groups = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut group: ParallelGroup =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        group.normalize();
        group.validate().map_err(|e| match e {
            CorpusError::Invariant {
                group_id,
                field,
                reason,
                ..
            } => CorpusError::Invariant {
                line: Some(line_no),
                group_id,
                field,
                reason,
            },
            other => other,
        })?;
        if !seen.insert(group.group_id.clone()) {
            return Err(CorpusError::DuplicateGroup(group.group_id));
        }
        groups.push(group);
    }
    Ok(groups)
}

/// Serialize groups as canonical JSONL: fixed key order, NFC text, one group per line.
pub fn encode_dataset(groups: &[ParallelGroup]) -> Result<String, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut out = String::new();
    for group in groups {
        group.validate()?;
        if !seen.insert(group.group_id.as_str()) {
            return Err(CorpusError::DuplicateGroup(group.group_id.clone()));
        }
        let mut g = group.clone();
        g.normalize();
        out.push_str(&serde_json::to_string(&g).expect("groups always serialize"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(groups: &[ParallelGroup], path: &Path) -> Result<(), CorpusError> {
    let text = encode_dataset(groups)?;
    crate::util::write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// One gradable answer in one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Item {
    pub item_id: String,
    pub group_id: String,
    pub language: Language,
    pub question: String,
    pub answer: String,
    pub label: Label,
    pub subject: Subject,
    pub grade: u8,
    pub topic: String,
}

impl Item {
    pub fn id_for(group_id: &str, language: Language) -> String {
        format!("{group_id}:{language}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetView {
    pub items: Vec<Item>,
}

impl DatasetView {
    pub fn new(items: Vec<Item>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for item in &items {
            if !seen.insert(item.item_id.as_str()) {
                return Err(CorpusError::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(Self { items })
    }

    /// Flatten the `language` variant of each group. Groups lacking that variant are skipped.
    pub fn from_groups<'a>(
        groups: impl IntoIterator<Item = &'a ParallelGroup>,
        language: Language,
    ) -> Self {
        let items = groups
            .into_iter()
            .filter_map(|g| {
                g.answer(language).map(|answer| Item {
                    item_id: Item::id_for(&g.group_id, language),
                    group_id: g.group_id.clone(),
                    language,
                    question: g.question.clone(),
                    answer: answer.to_string(),
                    label: g.label,
                    subject: g.subject,
                    grade: g.grade,
                    topic: g.topic.clone(),
                })
            })
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The single language of the view, or `None` if empty or mixed.
    pub fn language(&self) -> Option<Language> {
        let first = self.items.first()?.language;
        self.items
            .iter()
            .all(|i| i.language == first)
            .then_some(first)
    }

    pub fn group_ids(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.group_id.as_str()).collect()
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("items always serialize"));
            out.push('\n');
        }
        out
    }

    /// Content hash of the canonical JSONL encoding.
    pub fn content_hash(&self) -> String {
        crate::util::sha256_hex(self.encode().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        crate::util::write_atomic(path, self.encode().as_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut items = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: Item = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })?;
            items.push(item);
        }
        Self::new(items)
    }
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn empty_file_loads_as_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_dataset(&p).unwrap().is_empty());
        save_dataset(&[], &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"");
    }

    #[test]
    fn single_group_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let g = group("g1", Subject::Science, 7, Label::Acceptable);
        save_dataset(std::slice::from_ref(&g), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let loaded = load_dataset(&p).unwrap();
        assert_eq!(loaded, vec![g]);
        save_dataset(&loaded, &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn grade_out_of_range_reports_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let good = encode_dataset(&[
            group("a", Subject::Science, 6, Label::Acceptable),
            group("b", Subject::Science, 6, Label::Acceptable),
        ])
        .unwrap();
        let mut bad = group("c", Subject::Science, 6, Label::Acceptable);
        bad.grade = 11;
        let bad_line = serde_json::to_string(&bad).unwrap();
        std::fs::write(&p, format!("{good}{bad_line}\n")).unwrap();
        let err = load_dataset(&p).unwrap_err();
        match &err {
            CorpusError::Invariant {
                line, field, group_id, ..
            } => {
                assert_eq!(*line, Some(3));
                assert_eq!(*field, "grade");
                assert_eq!(group_id, "c");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let good = encode_dataset(&[group("a", Subject::Science, 6, Label::Acceptable)]).unwrap();
        std::fs::write(&p, format!("{good}{{not json\n")).unwrap();
        assert!(matches!(
            load_dataset(&p),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut v = serde_json::to_value(group("a", Subject::Science, 6, Label::Acceptable)).unwrap();
        v["extra"] = serde_json::json!(1);
        std::fs::write(&p, format!("{v}\n")).unwrap();
        assert!(matches!(load_dataset(&p), Err(CorpusError::Malformed { line: 1, .. })));
    }

    #[test]
    fn duplicate_group_ids_refused_on_save() {
        let g = group("dup", Subject::Science, 6, Label::Acceptable);
        assert!(matches!(
            encode_dataset(&[g.clone(), g]),
            Err(CorpusError::DuplicateGroup(id)) if id == "dup"
        ));
    }

    #[test]
    fn mix_ratio_only_on_cs() {
        let mut g = group("a", Subject::Science, 6, Label::Acceptable);
        g.variants.get_mut(&Language::Es).unwrap().mix_ratio = Some(0.2);
        assert!(matches!(g.validate(), Err(CorpusError::Invariant { field: "mix_ratio", .. })));
    }

    #[test]
    fn missing_en_variant_is_invalid() {
        let mut g = group("a", Subject::Science, 6, Label::Acceptable);
        g.variants.remove(&Language::En);
        assert!(matches!(g.validate(), Err(CorpusError::Invariant { field: "variants", .. })));
    }

    #[test]
    fn text_is_nfc_normalized_on_save() {
        let mut g = group("a", Subject::Science, 6, Label::Acceptable);
        // "energi" + combining acute accent + "a"
        g.variants.get_mut(&Language::Es).unwrap().answer = "La energi\u{301}a".into();
        let text = encode_dataset(&[g]).unwrap();
        assert!(text.contains("energ\u{ed}a"));
    }

    #[test]
    fn keys_are_written_in_canonical_order() {
        let text = encode_dataset(&[group("a", Subject::Science, 6, Label::Acceptable)]).unwrap();
        let order = ["\"group_id\"", "\"subject\"", "\"grade\"", "\"topic\"", "\"question\"", "\"label\"", "\"variants\"", "\"provenance\""];
        let positions: Vec<usize> = order.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let en = text.find("\"en\"").unwrap();
        let es = text.find("\"es\"").unwrap();
        let cs = text.find("\"cs\"").unwrap();
        assert!(en < es && es < cs);
    }

    #[test]
    fn view_round_trips_and_rejects_duplicate_items() {
        let groups = balanced_pool(1);
        let view = DatasetView::from_groups(&groups, Language::Cs);
        assert_eq!(view.len(), groups.len());
        assert_eq!(view.language(), Some(Language::Cs));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jsonl");
        view.save(&p).unwrap();
        assert_eq!(DatasetView::load(&p).unwrap(), view);
        let dup = vec![view.items[0].clone(), view.items[0].clone()];
        assert!(matches!(DatasetView::new(dup), Err(CorpusError::DuplicateItem(_))));
    }
}
