use std::fmt;

use serde::{Deserialize, Serialize};

use super::GradingError;
use crate::corpus::{Item, Label};
use crate::modelio::{ChatRequest, Message};

pub const PROMPT_TEMPLATE_ID: &str = "grading-v1";

pub const SYSTEM_PROMPT: &str = "You are grading short answers written by students in grades 6 to 10. \
Each answer responds to a Science or Social Science question and may be written in English, Spanish, \
or a mix of both languages (Spanglish). Grade the single-sentence answer as Acceptable or Unacceptable: \
Acceptable if it correctly and adequately answers the question, Unacceptable otherwise. Judge the content \
only and never penalize the choice or mixing of languages. Reply with exactly one word first: \
Acceptable or Unacceptable.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    ZeroShot,
    FewShot,
    Finetuned,
}

impl ModeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeKind::ZeroShot => "zero_shot",
            ModeKind::FewShot => "few_shot",
            ModeKind::Finetuned => "finetuned",
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    /// Item the exemplar was drawn from, used to keep it out of scored sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_item_id: Option<String>,
    pub question: String,
    pub answer: String,
    pub label: Label,
}

impl From<&Item> for Exemplar {
    fn from(item: &Item) -> Self {
        Self {
            source_item_id: Some(item.item_id.clone()),
            question: item.question.clone(),
            answer: item.answer.clone(),
            label: item.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingMode {
    pub kind: ModeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<Exemplar>,
}

impl GradingMode {
    pub const DEFAULT_EXEMPLARS: usize = 3;

    pub fn zero_shot() -> Self {
        Self { kind: ModeKind::ZeroShot, exemplars: Vec::new() }
    }

    pub fn few_shot(exemplars: Vec<Exemplar>) -> Self {
        Self { kind: ModeKind::FewShot, exemplars }
    }

    /// A fine-tuned grader sees the zero-shot prompt; the adapter does the rest.
    pub fn finetuned() -> Self {
        Self { kind: ModeKind::Finetuned, exemplars: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), GradingError> {
        if self.kind == ModeKind::FewShot && self.exemplars.is_empty() {
            return Err(GradingError::MissingExemplars);
        }
        Ok(())
    }

    /// Whether `item` is one of this mode's exemplars.
    pub fn uses_item(&self, item: &Item) -> bool {
        self.exemplars.iter().any(|e| {
            e.source_item_id.as_deref() == Some(item.item_id.as_str())
                || (e.question == item.question && e.answer == item.answer)
        })
    }
}

fn qa_block(question: &str, answer: &str) -> String {
    format!("Question: {question}\nAnswer: {answer}\nGrade:")
}

/// User message for `item` in `mode`. Zero-shot and fine-tuned share one shape,
/// which is also what training records are built from.
pub fn grading_user_content(item: &Item, mode: &GradingMode) -> String {
    let target = qa_block(&item.question, &item.answer);
    if mode.kind != ModeKind::FewShot {
        return target;
    }
    let mut out = String::from("Here are some graded examples.\n\n");
    for (i, ex) in mode.exemplars.iter().enumerate() {
        out.push_str(&format!(
            "Example {}\n{} {}\n\n",
            i + 1,
            qa_block(&ex.question, &ex.answer),
            ex.label.verdict_word()
        ));
    }
    out.push_str("Now grade this answer.\n\n");
    out.push_str(&target);
    out
}

pub fn build_grading_prompt(item: &Item, mode: &GradingMode) -> Result<ChatRequest, GradingError> {
    mode.validate()?;
    let mut req = ChatRequest::new(vec![
        Message::system(SYSTEM_PROMPT),
        Message::user(grading_user_content(item, mode)),
    ]);
    req.max_tokens = 8;
    Ok(req)
}
