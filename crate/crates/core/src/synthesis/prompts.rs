use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{SynthesisError, Violation};
use crate::codemix::{classify_language, mix_ratio, Lexicons};
use crate::corpus::{AnswerVariant, Label, Language, ParallelGroup, Provenance, Subject};
use crate::modelio::{ChatRequest, Message};

/// Opening line of the feedback appended to a re-prompt.
pub const FEEDBACK_MARKER: &str = "Your previous output was rejected";

const GENERATION_SYSTEM: &str =
    "You write realistic assessment data for middle and high school classrooms. You follow output format instructions exactly.";
const TRANSLATION_SYSTEM: &str =
    "You are a careful bilingual English-Spanish translator working on classroom assessment data.";

/// Where a parsed batch belongs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchContext {
    pub subject: Subject,
    pub grade: u8,
    pub batch_id: String,
    pub generator_id: String,
}

pub fn build_generation_prompt(
    subject: Subject,
    grade: u8,
    batch_size: usize,
    exclude_topics: &BTreeSet<String>,
) -> ChatRequest {
    let pairs = if batch_size == 1 { "exactly 1 question-answer pair".to_string() } else { format!("exactly {batch_size} question-answer pairs") };
    let mut text = format!(
        "Write {pairs} for grade {grade} {} students.\n\nRequirements:\n\
         - Each item has a question, one student answer, a topic, and a binary grade: Acceptable or Unacceptable.\n\
         - Mix Acceptable and Unacceptable answers in roughly equal numbers.\n\
         - Unacceptable answers must be realistic and nuanced: plausible mistakes or misconceptions a real student \
         might write, never absurd or off-topic.\n\
         - Keep Acceptable and Unacceptable answers similar in length.\n\
         - Every answer is exactly one sentence.\n\
         - Cover a wide range of topics and use a different topic for every item.\n",
        subject.display_name()
    );
    if !exclude_topics.is_empty() {
        let list: Vec<&str> = exclude_topics.iter().map(String::as_str).collect();
        text.push_str(&format!("- Do not use any of these topics: {}.\n", list.join(", ")));
    }
    text.push_str(
        "\nReturn only a fenced JSON array, like this:\n```json\n\
         [{\"question\": \"...\", \"answer\": \"...\", \"grade\": \"Acceptable\", \"topic\": \"...\"}]\n```",
    );
    ChatRequest::new(vec![Message::system(GENERATION_SYSTEM), Message::user(text)])
}

/// Append the violations, verbatim, to the last user message.
pub fn with_feedback(request: &ChatRequest, violations: &[Violation]) -> ChatRequest {
    let mut out = request.clone();
    let mut note = format!("\n\n{FEEDBACK_MARKER} for these reasons:\n");
    for v in violations {
        note.push_str("- ");
        note.push_str(&v.describe());
        note.push('\n');
    }
    note.push_str("Produce a new output that fixes every problem listed.");
    if let Some(m) = out.messages.iter_mut().rev().find(|m| m.role == crate::modelio::Role::User) {
        m.content.push_str(&note);
    }
    out
}

/// Body of the first fenced block that holds a JSON array, else the outermost `[...]` span.
pub fn extract_json_array(text: &str) -> Option<&str> {
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let Some(end) = after[body_start..].find("```") else { break };
        let body = after[body_start..body_start + end].trim();
        if body.starts_with('[') {
            return Some(body);
        }
        rest = &after[body_start + end + 3..];
    }
    let (start, end) = (text.find('[')?, text.rfind(']')?);
    (start < end).then(|| &text[start..=end])
}

fn parse_array(text: &str) -> Result<Vec<Value>, SynthesisError> {
    let body = extract_json_array(text).ok_or(SynthesisError::NoJsonArray)?;
    match serde_json::from_str::<Value>(body).map_err(|e| SynthesisError::BadJson(e.to_string()))? {
        Value::Array(items) => Ok(items),
        _ => Err(SynthesisError::NoJsonArray),
    }
}

fn field<'a>(value: &'a Value, index: usize, name: &'static str) -> Result<&'a str, SynthesisError> {
    value
        .get(name)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or(SynthesisError::MissingField { index, field: name })
}

/// English-only groups, ids `{batch_id}-{index:02}`.
pub fn parse_generation_output(text: &str, ctx: &BatchContext) -> Result<Vec<ParallelGroup>, SynthesisError> {
    parse_array(text)?
        .iter()
        .enumerate()
        .map(|(index, v)| {
            let question = field(v, index, "question")?;
            let answer = field(v, index, "answer")?;
            let grade = field(v, index, "grade")?;
            let topic = field(v, index, "topic")?;
            let label = match grade.to_lowercase().as_str() {
                "acceptable" => Label::Acceptable,
                "unacceptable" => Label::Unacceptable,
                _ => return Err(SynthesisError::UnknownGrade { index, value: grade.to_string() }),
            };
            let mut group = ParallelGroup {
                group_id: format!("{}-{index:02}", ctx.batch_id),
                subject: ctx.subject,
                grade: ctx.grade,
                topic: topic.to_string(),
                question: question.to_string(),
                label,
                variants: BTreeMap::from([(Language::En, AnswerVariant::new(answer))]),
                provenance: Provenance { generator_id: ctx.generator_id.clone(), batch_id: ctx.batch_id.clone() },
            };
            group.normalize();
            Ok(group)
        })
        .collect()
}

pub fn build_translation_prompt(
    groups: &[ParallelGroup],
    target: Language,
    ratio_hint: Option<f64>,
) -> Result<ChatRequest, SynthesisError> {
    if groups.is_empty() {
        return Err(SynthesisError::NothingToTranslate);
    }
    let mut text = match target {
        Language::Es => "Translate the student answers below from English into Spanish.\n".to_string(),
        Language::Cs => {
            let mut t = "Rewrite the student answers below in Spanglish, switching between English and Spanish \
                         naturally inside each sentence the way a bilingual student would."
                .to_string();
            if let Some(r) = ratio_hint {
                t.push_str(&format!(" Use about {:.0}% Spanish words and the rest English.", r * 100.0));
            }
            t.push('\n');
            t
        }
        Language::En => return Err(SynthesisError::BadTarget(target)),
    };
    text.push_str(
        "Translate only the answers. Keep each answer's meaning, correctness and grade level exactly as they are, \
         including any mistakes, and keep it to one sentence.\n\
         Return only a fenced JSON array of {\"id\": ..., \"answer\": ...} objects in the same order.\n\n",
    );
    for g in groups {
        let en = g.answer(Language::En).ok_or(SynthesisError::NothingToTranslate)?;
        text.push_str(&format!("id: {}\nanswer: {en}\n\n", g.group_id));
    }
    Ok(ChatRequest::new(vec![Message::system(TRANSLATION_SYSTEM), Message::user(text.trim_end())]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedAnswer {
    pub id: String,
    pub answer: String,
}

pub fn parse_translation_output(text: &str) -> Result<Vec<TranslatedAnswer>, SynthesisError> {
    parse_array(text)?
        .iter()
        .enumerate()
        .map(|(index, v)| {
            Ok(TranslatedAnswer { id: field(v, index, "id")?.to_string(), answer: field(v, index, "answer")?.to_string() })
        })
        .collect()
}

/// Set `target` variants, checking each against the code-mix classifier.
pub fn attach_translations(
    groups: &[ParallelGroup],
    parsed: &[TranslatedAnswer],
    target: Language,
    lexicons: &Lexicons,
    cs_threshold: f64,
) -> Result<Vec<ParallelGroup>, SynthesisError> {
    if target == Language::En {
        return Err(SynthesisError::BadTarget(target));
    }
    if parsed.len() != groups.len() {
        return Err(SynthesisError::CountMismatch { groups: groups.len(), answers: parsed.len() });
    }
    let by_id: BTreeMap<&str, &TranslatedAnswer> = parsed.iter().map(|t| (t.id.as_str(), t)).collect();
    if let Some(t) = parsed.iter().find(|t| !groups.iter().any(|g| g.group_id == t.id)) {
        return Err(SynthesisError::UnknownId(t.id.clone()));
    }
    groups
        .iter()
        .map(|g| {
            let t = by_id.get(g.group_id.as_str()).ok_or_else(|| SynthesisError::UnknownId(g.group_id.clone()))?;
            let answer = crate::corpus::nfc(&t.answer);
            let detected = classify_language(&answer, lexicons, cs_threshold)
                .map_err(|_| SynthesisError::Untaggable { group_id: g.group_id.clone() })?;
            if detected != target {
                return Err(SynthesisError::MonolingualLeak { group_id: g.group_id.clone(), target, detected });
            }
            let mut variant = AnswerVariant::new(answer.clone());
            if target == Language::Cs {
                variant.mix_ratio = mix_ratio(&answer, lexicons);
            }
            let mut out = g.clone();
            out.variants.insert(target, variant);
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> BatchContext {
        BatchContext { subject: Subject::Science, grade: 7, batch_id: "b000".into(), generator_id: "gen".into() }
    }

    fn en_group(id: &str) -> ParallelGroup {
        ParallelGroup {
            group_id: id.into(),
            subject: Subject::Science,
            grade: 7,
            topic: "plants".into(),
            question: "What does photosynthesis make?".into(),
            label: Label::Acceptable,
            variants: BTreeMap::from([(Language::En, AnswerVariant::new("It converts sunlight into chemical energy."))]),
            provenance: Provenance { generator_id: "gen".into(), batch_id: "b000".into() },
        }
    }

    #[test]
    fn generation_prompt_carries_constraints() {
        let p = build_generation_prompt(Subject::Science, 7, 10, &BTreeSet::new());
        let text = p.last_user_content().unwrap();
        for needle in ["exactly 10", "grade 7", "Science", "Acceptable or Unacceptable", "realistic and nuanced", "one sentence", "similar in length", "```json"] {
            assert!(text.contains(needle), "missing {needle:?}");
        }
        assert!(!text.contains("Do not use"));
    }

    #[test]
    fn generation_prompt_lists_exclusions_and_singular() {
        let excl = BTreeSet::from(["photosynthesis".to_string()]);
        let p = build_generation_prompt(Subject::SocialScience, 9, 1, &excl);
        let text = p.last_user_content().unwrap();
        assert!(text.contains("Do not use any of these topics: photosynthesis."));
        assert!(text.contains("exactly 1 question-answer pair "));
    }

    #[test]
    fn parses_fenced_array() {
        let items: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"question":"Q{i}?","answer":"A {i}.","grade":"{}","topic":"t{i}"}}"#, if i % 2 == 0 { "ACCEPTABLE" } else { "unacceptable" }))
            .collect();
        let text = format!("Sure!\n```json\n[{}]\n```\nDone.", items.join(","));
        let groups = parse_generation_output(&text, &ctx()).unwrap();
        assert_eq!(groups.len(), 10);
        assert_eq!(groups[0].label, Label::Acceptable);
        assert_eq!(groups[1].label, Label::Unacceptable);
        assert_eq!(groups[3].group_id, "b000-03");
        assert_eq!(groups[3].answer(Language::En), Some("A 3."));
    }

    #[test]
    fn skips_non_array_fences() {
        let text = "```text\nnotes\n```\n```json\n[{\"question\":\"Q\",\"answer\":\"A.\",\"grade\":\"Acceptable\",\"topic\":\"t\"}]\n```";
        assert_eq!(parse_generation_output(text, &ctx()).unwrap().len(), 1);
    }

    #[test]
    fn parse_errors_cite_index() {
        let text = r#"```json
[{"question":"Q","answer":"A.","grade":"Acceptable","topic":"t"},{"question":"Q","grade":"Acceptable","topic":"t"}]
```"#;
        assert!(matches!(
            parse_generation_output(text, &ctx()),
            Err(SynthesisError::MissingField { index: 1, field: "answer" })
        ));
        let text = r#"[{"question":"Q","answer":"A.","grade":"Good","topic":"t"}]"#;
        assert!(matches!(parse_generation_output(text, &ctx()), Err(SynthesisError::UnknownGrade { index: 0, .. })));
        assert!(matches!(parse_generation_output("no array here", &ctx()), Err(SynthesisError::NoJsonArray)));
    }

    #[test]
    fn translation_prompts() {
        let groups = vec![en_group("g1")];
        let es = build_translation_prompt(&groups, Language::Es, None).unwrap();
        let text = es.last_user_content().unwrap();
        assert!(text.contains("Spanish"));
        assert!(!text.contains('%'));
        assert!(text.contains("id: g1"));
        let cs = build_translation_prompt(&groups, Language::Cs, Some(0.6)).unwrap();
        assert!(cs.last_user_content().unwrap().contains("about 60% Spanish words"));
        assert!(matches!(build_translation_prompt(&[], Language::Es, None), Err(SynthesisError::NothingToTranslate)));
    }

    #[test]
    fn attaches_and_checks_translations() {
        let lex = Lexicons::builtin();
        let groups: Vec<_> = (0..10).map(|i| en_group(&format!("g{i}"))).collect();
        let es: Vec<_> = groups
            .iter()
            .map(|g| TranslatedAnswer { id: g.group_id.clone(), answer: "Convierte la luz del sol en energía química.".into() })
            .collect();
        let out = attach_translations(&groups, &es, Language::Es, &lex, 0.1).unwrap();
        assert!(out.iter().all(|g| g.answer(Language::Es).is_some()));

        let leak = vec![TranslatedAnswer { id: "g0".into(), answer: "It converts sunlight into energy.".into() }];
        match attach_translations(&groups[..1], &leak, Language::Cs, &lex, 0.1) {
            Err(SynthesisError::MonolingualLeak { group_id, detected, .. }) => {
                assert_eq!(group_id, "g0");
                assert_eq!(detected, Language::En);
            }
            other => panic!("{other:?}"),
        }

        let cs = vec![TranslatedAnswer { id: "g0".into(), answer: "La fotosíntesis converts sunlight into energía química".into() }];
        let out = attach_translations(&groups[..1], &cs, Language::Cs, &lex, 0.1).unwrap();
        let r = out[0].variants[&Language::Cs].mix_ratio.unwrap();
        assert!((r - 4.0 / 7.0).abs() < 1e-12);

        assert!(matches!(
            attach_translations(&groups, &es[..9], Language::Es, &lex, 0.1),
            Err(SynthesisError::CountMismatch { groups: 10, answers: 9 })
        ));
    }
}
