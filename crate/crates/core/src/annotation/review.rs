use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{AnnotationError, Rating, RatingStore, ReviewAssignment, Task};
use crate::corpus::{Item, Label, Language, ParallelGroup};
use crate::util::Clock;

/// What a reviewer sees for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewItem {
    pub item_id: String,
    pub language: Language,
    pub question: String,
    pub answer: String,
    pub label: Label,
    /// English original for translated items.
    pub source_answer: Option<String>,
}

/// Review entries for every variant of every group, keyed by item id.
pub fn review_items(groups: &[ParallelGroup]) -> BTreeMap<String, ReviewItem> {
    let mut out = BTreeMap::new();
    for g in groups {
        let english = g.answer(Language::En).map(str::to_string);
        for (language, variant) in &g.variants {
            let item_id = Item::id_for(&g.group_id, *language);
            out.insert(
                item_id.clone(),
                ReviewItem {
                    item_id,
                    language: *language,
                    question: g.question.clone(),
                    answer: variant.answer.clone(),
                    label: g.label,
                    source_answer: (*language != Language::En).then(|| english.clone()).flatten(),
                },
            );
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionSummary {
    pub rated: usize,
    pub skipped: usize,
    pub remaining: usize,
    pub quit: bool,
}

fn question_for(metric: &str) -> &'static str {
    match metric {
        "agree" => "Is the assigned grade correct? (1 yes, 0 no)",
        "accurateness" => "Accurateness (1 accurate translation, 0 inaccurate)",
        "naturalness" => "Naturalness (1 natural, 0 unnatural)",
        _ => "Value (0 or 1)",
    }
}

enum Answer {
    Value(u8),
    Skip,
    Quit,
}

fn ask(input: &mut impl BufRead, output: &mut impl Write, metric: &str) -> std::io::Result<Answer> {
    loop {
        write!(output, "{} [1/0, s skip, q quit]: ", question_for(metric))?;
        output.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Ok(Answer::Quit);
        }
        match line.trim() {
            "1" => return Ok(Answer::Value(1)),
            "0" => return Ok(Answer::Value(0)),
            "s" | "S" => return Ok(Answer::Skip),
            "q" | "Q" => return Ok(Answer::Quit),
            other => writeln!(output, "  unrecognised input {other:?}")?,
        }
    }
}

/// Walk the annotator's unrated items, reading 0/1 keys from `input`.
/// Every completed item is recorded immediately; EOF behaves like quit.
pub fn review_session(
    store: &mut RatingStore,
    assignment: &ReviewAssignment,
    items: &BTreeMap<String, ReviewItem>,
    clock: &Clock,
    mut input: impl BufRead,
    mut output: impl Write,
) -> Result<SessionSummary, AnnotationError> {
    let io = |e: std::io::Error| AnnotationError::Io { path: "<terminal>".into(), message: e.to_string() };
    let pending: Vec<&String> = assignment
        .item_ids
        .iter()
        .filter(|i| store.latest(&assignment.annotator_id, assignment.task, i).is_none())
        .collect();
    let mut summary = SessionSummary { remaining: pending.len(), ..Default::default() };

    'items: for (k, item_id) in pending.iter().enumerate() {
        let Some(item) = items.get(item_id.as_str()) else {
            return Err(AnnotationError::InvalidAssignment(format!("no content for item `{item_id}`")));
        };
        writeln!(output, "\n[{}/{}] {}", k + 1, pending.len(), item.item_id).map_err(io)?;
        writeln!(output, "Question: {}", item.question).map_err(io)?;
        match (assignment.task, &item.source_answer) {
            (Task::TranslationCheck, Some(src)) => {
                writeln!(output, "English: {src}").map_err(io)?;
                writeln!(output, "Translation ({}): {}", item.language.display_name(), item.answer).map_err(io)?;
            }
            _ => {
                writeln!(output, "Answer: {}", item.answer).map_err(io)?;
                writeln!(output, "Assigned grade: {}", item.label.verdict_word()).map_err(io)?;
            }
        }
        let mut values = BTreeMap::new();
        for metric in assignment.task.metrics() {
            match ask(&mut input, &mut output, metric).map_err(io)? {
                Answer::Value(v) => {
                    values.insert(metric.to_string(), v);
                }
                Answer::Skip => {
                    summary.skipped += 1;
                    continue 'items;
                }
                Answer::Quit => {
                    summary.quit = true;
                    break 'items;
                }
            }
        }
        store.record_rating(Rating {
            annotator_id: assignment.annotator_id.clone(),
            item_id: item.item_id.clone(),
            task: assignment.task,
            values,
            timestamp: clock.now(),
        })?;
        summary.rated += 1;
        summary.remaining -= 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::make_translation_assignments;
    use crate::corpus::testing::group;
    use crate::corpus::Subject;

    #[test]
    fn scripted_session_records_ratings() {
        let groups: Vec<_> = (0..4).map(|i| group(&format!("g{i}"), Subject::Science, 7, Label::Acceptable)).collect();
        let items = review_items(&groups);
        let pool: Vec<String> = items.keys().filter(|k| k.ends_with(":cs")).cloned().collect();
        let [a, b] = make_translation_assignments(&pool, 3, 2, 0, ["A", "B"]).unwrap();
        let mut store = RatingStore::new(vec![a.clone(), b]);
        let clock = Clock::Fixed("2024-01-01T00:00:00.000Z".into());
        let input = "1\n0\nbogus\ns\n1\n1\n";
        let mut out = Vec::new();
        let s = review_session(&mut store, &a, &items, &clock, input.as_bytes(), &mut out).unwrap();
        assert_eq!(s, SessionSummary { rated: 2, skipped: 1, remaining: 1, quit: false });
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("Translation (Spanglish)"));
        assert!(text.contains("unrecognised input"));
        let r = store.latest("A", Task::TranslationCheck, &a.item_ids[0]).unwrap();
        assert_eq!(r.values["accurateness"], 1);
        assert_eq!(r.values["naturalness"], 0);

        let s = review_session(&mut store, &a, &items, &clock, "q\n".as_bytes(), Vec::new()).unwrap();
        assert!(s.quit);
        assert_eq!(s.remaining, 1);
    }
}
