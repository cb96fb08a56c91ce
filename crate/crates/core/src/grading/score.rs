use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{build_grading_prompt, GradingError, GradingMode};
use crate::corpus::Item;
use crate::modelio::{Backend, Completion, TokenLogprob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Acceptable,
    Unacceptable,
    ParseFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// `label_logprob`, degrading to `sample_frequency` and then `hard_verdict`.
    Auto,
    LabelLogprob,
    SampleFrequency,
    HardVerdict,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Auto => "auto",
            StrategyKind::LabelLogprob => "label_logprob",
            StrategyKind::SampleFrequency => "sample_frequency",
            StrategyKind::HardVerdict => "hard_verdict",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "label_logprob" | "logprob" => Ok(Self::LabelLogprob),
            "sample_frequency" | "samples" => Ok(Self::SampleFrequency),
            "hard_verdict" | "hard" => Ok(Self::HardVerdict),
            other => Err(format!("unknown scoring strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringStrategy {
    pub kind: StrategyKind,
    #[serde(default = "default_samples")]
    pub n_samples: u32,
}

fn default_samples() -> u32 {
    5
}

impl Default for ScoringStrategy {
    fn default() -> Self {
        Self { kind: StrategyKind::Auto, n_samples: default_samples() }
    }
}

impl ScoringStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, ..Self::default() }
    }
}

const DETERMINISTIC_TEMPERATURE: f64 = 0.0;
const SAMPLING_TEMPERATURE: f64 = 0.7;

fn verdict_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(unacceptable|acceptable)\b").expect("valid regex"))
}

/// First standalone "acceptable"/"unacceptable" (any case) decides.
pub fn parse_verdict(text: &str) -> Verdict {
    match verdict_regex().find(text) {
        Some(m) if m.as_str().len() == "unacceptable".len() => Verdict::Unacceptable,
        Some(_) => Verdict::Acceptable,
        None => Verdict::ParseFailure,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Accept,
    Reject,
}

/// Which verdict a (possibly partial) token starts.
fn token_side(token: &str) -> Option<Side> {
    let t: String = token
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if t.len() >= 2 && t.starts_with("un") && "unacceptable".starts_with(&t) {
        Some(Side::Reject)
    } else if t.len() >= 3 && "acceptable".starts_with(&t) {
        Some(Side::Accept)
    } else {
        None
    }
}

/// Normalised probability mass on the acceptable verdict at the first position
/// where the sampled token starts a verdict. A verdict missing from the listed
/// alternatives is bounded by the smallest listed logprob.
fn logprob_score(positions: &[TokenLogprob]) -> Option<f64> {
    let pos = positions.iter().find(|p| token_side(&p.token).is_some())?;
    let mut candidates: Vec<(&str, f64)> = pos.top_alternatives.iter().map(|a| (a.token.as_str(), a.logprob)).collect();
    candidates.push((pos.token.as_str(), pos.logprob));
    let best = |side: Side| {
        candidates
            .iter()
            .filter(|(t, _)| token_side(t) == Some(side))
            .map(|(_, lp)| *lp)
            .max_by(f64::total_cmp)
    };
    let floor = candidates.iter().map(|(_, lp)| *lp).min_by(f64::total_cmp)?;
    let (la, lr) = match (best(Side::Accept), best(Side::Reject)) {
        (Some(a), Some(r)) => (a, r),
        (Some(a), None) => (a, floor.min(a)),
        (None, Some(r)) => (floor.min(r), r),
        (None, None) => return None,
    };
    // softmax over the two, shifted for stability
    let m = la.max(lr);
    let (ea, er) = ((la - m).exp(), (lr - m).exp());
    Some(ea / (ea + er))
}

fn hard_score(text: &str) -> (f64, Verdict) {
    match parse_verdict(text) {
        Verdict::Acceptable => (1.0, Verdict::Acceptable),
        Verdict::Unacceptable => (0.0, Verdict::Unacceptable),
        Verdict::ParseFailure => (0.5, Verdict::ParseFailure),
    }
}

fn frequency_score(completions: &[Completion]) -> (f64, Verdict) {
    let verdicts: Vec<Verdict> = completions.iter().map(|c| parse_verdict(&c.text)).collect();
    if verdicts.iter().all(|v| *v == Verdict::ParseFailure) {
        return (0.5, Verdict::ParseFailure);
    }
    let accepted = verdicts.iter().filter(|v| **v == Verdict::Acceptable).count();
    let score = accepted as f64 / completions.len() as f64;
    (score, threshold(score))
}

fn threshold(score: f64) -> Verdict {
    if score >= 0.5 {
        Verdict::Acceptable
    } else {
        Verdict::Unacceptable
    }
}

/// Score and verdict for one item, plus the strategy that actually produced them.
pub fn score_item(
    backend: &dyn Backend,
    item: &Item,
    mode: &GradingMode,
    strategy: ScoringStrategy,
    seed: Option<u64>,
) -> Result<(f64, Verdict, StrategyKind), GradingError> {
    let mut request = build_grading_prompt(item, mode)?;
    request.seed = seed;
    let call = |req: &crate::modelio::ChatRequest| {
        backend.complete(req).map_err(|source| GradingError::Backend { item_id: item.item_id.clone(), source })
    };

    let mut kind = strategy.kind;
    if matches!(kind, StrategyKind::Auto | StrategyKind::LabelLogprob) {
        let mut req = request.clone();
        req.temperature = DETERMINISTIC_TEMPERATURE;
        req.want_logprobs = true;
        let completions = call(&req)?;
        let scored = completions
            .first()
            .and_then(|c| c.token_logprobs.as_deref())
            .and_then(logprob_score);
        if let Some(score) = scored {
            return Ok((score, threshold(score), StrategyKind::LabelLogprob));
        }
        log::debug!("{}: no verdict logprobs, falling back to sampling", item.item_id);
        kind = StrategyKind::SampleFrequency;
    }

    if kind == StrategyKind::SampleFrequency {
        let mut req = request.clone();
        req.temperature = SAMPLING_TEMPERATURE;
        req.n_samples = strategy.n_samples.max(1);
        let completions = call(&req)?;
        if !completions.is_empty() {
            let (score, verdict) = frequency_score(&completions);
            return Ok((score, verdict, StrategyKind::SampleFrequency));
        }
        if strategy.kind == StrategyKind::SampleFrequency {
            return Err(GradingError::Backend {
                item_id: item.item_id.clone(),
                source: crate::modelio::ModelError::BadResponse("no samples returned".into()),
            });
        }
    }

    let mut req = request;
    req.temperature = DETERMINISTIC_TEMPERATURE;
    let completions = call(&req)?;
    let text = completions.first().map(|c| c.text.as_str()).unwrap_or("");
    let (score, verdict) = hard_score(text);
    Ok((score, verdict, StrategyKind::HardVerdict))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::{Label, Language, Subject};
    use crate::modelio::{LogprobScript, MockBackend, MockResponse};

    fn item() -> Item {
        Item {
            item_id: "g1:cs".into(),
            group_id: "g1".into(),
            language: Language::Cs,
            question: "Why do plants need light?".into(),
            answer: "Plants use light para hacer su food.".into(),
            label: Label::Acceptable,
            subject: Subject::Science,
            grade: 6,
            topic: "photosynthesis".into(),
        }
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("Acceptable"), Verdict::Acceptable);
        assert_eq!(parse_verdict("The answer is unacceptable because it is wrong"), Verdict::Unacceptable);
        assert_eq!(parse_verdict("I cannot grade this"), Verdict::ParseFailure);
        assert_eq!(parse_verdict("UNACCEPTABLE."), Verdict::Unacceptable);
        assert_eq!(parse_verdict("acceptable, not unacceptable"), Verdict::Acceptable);
        assert_eq!(parse_verdict("acceptability"), Verdict::ParseFailure);
    }

    #[test]
    fn logprob_score_is_two_way_softmax() {
        let mut lp = BTreeMap::new();
        lp.insert("Acceptable".to_string(), -0.2);
        lp.insert("Unacceptable".to_string(), -1.8);
        let mock = MockBackend::single("m", 0, MockResponse { logprobs: Some(LogprobScript::Fixed(lp)), ..Default::default() });
        let (score, verdict, kind) =
            score_item(&mock, &item(), &GradingMode::zero_shot(), ScoringStrategy::default(), None).unwrap();
        let expected = (-0.2f64).exp() / ((-0.2f64).exp() + (-1.8f64).exp());
        assert!((score - expected).abs() < 1e-12);
        assert!((score - 0.832).abs() < 5e-4);
        assert_eq!(verdict, Verdict::Acceptable);
        assert_eq!(kind, StrategyKind::LabelLogprob);
    }

    #[test]
    fn split_verdict_tokens_are_recognised() {
        let positions = vec![TokenLogprob {
            token: "Un".into(),
            logprob: -0.1,
            top_alternatives: vec![
                crate::modelio::Alternative { token: "Un".into(), logprob: -0.1 },
                crate::modelio::Alternative { token: "Accept".into(), logprob: -2.4 },
                crate::modelio::Alternative { token: "The".into(), logprob: -5.0 },
            ],
        }];
        let s = logprob_score(&positions).unwrap();
        let expected = (-2.4f64).exp() / ((-2.4f64).exp() + (-0.1f64).exp());
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn hard_verdict_unacceptable_scores_zero() {
        let mock = MockBackend::single("m", 0, MockResponse { text: "Unacceptable".into(), ..Default::default() });
        let r = score_item(&mock, &item(), &GradingMode::zero_shot(), ScoringStrategy::new(StrategyKind::HardVerdict), None).unwrap();
        assert_eq!(r, (0.0, Verdict::Unacceptable, StrategyKind::HardVerdict));
        let mock = MockBackend::single("m", 0, MockResponse { text: "hmm".into(), ..Default::default() });
        let r = score_item(&mock, &item(), &GradingMode::zero_shot(), ScoringStrategy::new(StrategyKind::HardVerdict), None).unwrap();
        assert_eq!(r, (0.5, Verdict::ParseFailure, StrategyKind::HardVerdict));
    }

    #[test]
    fn sample_frequency_counts_acceptable() {
        let samples = ["Acceptable", "Acceptable", "Unacceptable", "Acceptable", "Acceptable"];
        let mock = MockBackend::single(
            "m",
            0,
            MockResponse { samples: samples.iter().map(|s| s.to_string()).collect(), ..Default::default() },
        );
        let r = score_item(&mock, &item(), &GradingMode::zero_shot(), ScoringStrategy::new(StrategyKind::SampleFrequency), None).unwrap();
        assert_eq!(r, (0.8, Verdict::Acceptable, StrategyKind::SampleFrequency));
    }

    #[test]
    fn missing_logprobs_fall_back_to_sampling() {
        let mock = MockBackend::single("m", 0, MockResponse { text: "Unacceptable".into(), ..Default::default() });
        let r = score_item(&mock, &item(), &GradingMode::zero_shot(), ScoringStrategy::default(), None).unwrap();
        assert_eq!(r, (0.0, Verdict::Unacceptable, StrategyKind::SampleFrequency));
    }
}
