#![allow(dead_code)]

use std::collections::BTreeMap;

use codeswitch_grader::corpus::{AnswerVariant, Provenance};
use codeswitch_grader::{DatasetView, Label, Language, ParallelGroup, Subject};

pub fn group(id: &str, subject: Subject, label: Label, topic: &str, en: &str) -> ParallelGroup {
    ParallelGroup {
        group_id: id.to_string(),
        subject,
        grade: 7,
        topic: topic.to_string(),
        question: format!("Question {id}?"),
        label,
        variants: BTreeMap::from([
            (Language::En, AnswerVariant::new(en)),
            (Language::Es, AnswerVariant::new(format!("La respuesta {id} explica la idea."))),
            (
                Language::Cs,
                AnswerVariant { answer: format!("La respuesta {id} explains the idea."), mix_ratio: Some(0.5) },
            ),
        ]),
        provenance: Provenance { generator_id: "test".into(), batch_id: "b000".into() },
    }
}

/// `n` acceptable answers mentioning "good" and `n` unacceptable ones mentioning "poor".
pub fn labelled_groups(n: usize) -> Vec<ParallelGroup> {
    (0..n)
        .flat_map(|k| {
            [
                group(&format!("g{k:03}a"), Subject::Science, Label::Acceptable, &format!("t{k}"), &format!("A good answer number {k}.")),
                group(&format!("g{k:03}u"), Subject::Science, Label::Unacceptable, &format!("t{k}"), &format!("A poor answer number {k}.")),
            ]
        })
        .collect()
}

pub fn view(language: Language, n: usize) -> DatasetView {
    DatasetView::from_groups(&labelled_groups(n), language)
}
