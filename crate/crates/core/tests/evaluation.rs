mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use codeswitch_grader::grading::{
    evaluate_dataset, EvalOptions, Exemplar, GradingError, GradingMode, ScoringStrategy, StrategyKind, Verdict,
};
use codeswitch_grader::modelio::{
    Backend, ChatRequest, Completion, LogprobScript, LoggedBackend, MockBackend, MockResponse, MockRule, MockScript,
    ModelError, Transcript,
};
use codeswitch_grader::util::Clock;
use codeswitch_grader::Language;

fn fixed(a: f64, u: f64) -> MockResponse {
    MockResponse {
        logprobs: Some(LogprobScript::Fixed(BTreeMap::from([("Acceptable".into(), a), ("Unacceptable".into(), u)]))),
        ..Default::default()
    }
}

fn mock(rules: Vec<MockRule>) -> MockBackend {
    MockBackend::new("mock", "m", MockScript { seed: 3, rules }).unwrap()
}

fn rule(pattern: &str, response: MockResponse) -> MockRule {
    MockRule { pattern: pattern.into(), model: None, response }
}

fn opts(max_in_flight: usize) -> EvalOptions {
    EvalOptions { seed: 5, max_in_flight, model_config: "baseline".into() }
}

fn hashed() -> MockBackend {
    mock(vec![rule(
        "",
        MockResponse {
            logprobs: Some(LogprobScript::Hashed(vec!["Acceptable".into(), "Unacceptable".into()])),
            ..Default::default()
        },
    )])
}

#[test]
fn separating_scores_give_auc_one() {
    let b = mock(vec![rule(r"Answer: [^\n]*good[^\n]*\nGrade:\n\z", fixed(-0.1, -3.0)), rule("", fixed(-3.0, -0.1))]);
    let run = evaluate_dataset(&b, &common::view(Language::En, 10), &GradingMode::zero_shot(), ScoringStrategy::default(), &opts(4))
        .unwrap();
    assert_eq!(run.auc, 1.0);
    assert_eq!(run.strategy_applied, StrategyKind::LabelLogprob);
    assert_eq!(run.recompute_auc().unwrap(), 1.0);
}

#[test]
fn constant_scores_give_auc_half() {
    let b = mock(vec![rule("", fixed(-0.7, -0.7))]);
    let run = evaluate_dataset(&b, &common::view(Language::Es, 10), &GradingMode::zero_shot(), ScoringStrategy::default(), &opts(4))
        .unwrap();
    assert_eq!(run.auc, 0.5);
}

#[test]
fn runs_are_deterministic_and_independent_of_concurrency() {
    let view = common::view(Language::Cs, 25);
    let strategy = ScoringStrategy::default();
    let a = evaluate_dataset(&hashed(), &view, &GradingMode::zero_shot(), strategy, &opts(1)).unwrap();
    let b = evaluate_dataset(&hashed(), &view, &GradingMode::zero_shot(), strategy, &opts(8)).unwrap();
    let c = evaluate_dataset(&hashed(), &view, &GradingMode::zero_shot(), strategy, &opts(8)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(b.to_json(), c.to_json());
    assert!(a.auc > 0.0 && a.auc < 1.0);
    let ids: Vec<&str> = a.item_scores.iter().map(|s| s.item_id.as_str()).collect();
    let want: Vec<&str> = view.items.iter().map(|i| i.item_id.as_str()).collect();
    assert_eq!(ids, want);
}

#[test]
fn falls_back_to_sampling_then_hard_verdicts() {
    let samples = mock(vec![rule(
        "",
        MockResponse { samples: vec!["Acceptable".into(), "Unacceptable".into(), "Acceptable".into()], ..Default::default() },
    )]);
    let view = common::view(Language::En, 3);
    let run = evaluate_dataset(&samples, &view, &GradingMode::zero_shot(), ScoringStrategy::default(), &opts(2)).unwrap();
    assert_eq!(run.strategy_applied, StrategyKind::SampleFrequency);
    assert!((run.item_scores[0].score - 3.0 / 5.0).abs() < 1e-12);

    let hard = mock(vec![rule(r"good", MockResponse { text: "Acceptable.".into(), ..Default::default() }), rule("", MockResponse { text: "hmm".into(), ..Default::default() })]);
    let run = evaluate_dataset(&hard, &view, &GradingMode::zero_shot(), ScoringStrategy::new(StrategyKind::HardVerdict), &opts(2)).unwrap();
    assert_eq!(run.strategy_applied, StrategyKind::HardVerdict);
    assert_eq!(run.parse_failures, 3);
    assert!(run.item_scores.iter().filter(|s| s.verdict == Verdict::ParseFailure).all(|s| s.score == 0.5));
    assert_eq!(run.auc, 1.0);
}

#[test]
fn exemplars_from_the_scored_set_are_rejected() {
    let view = common::view(Language::En, 3);
    let mode = GradingMode::few_shot(vec![Exemplar::from(&view.items[0])]);
    let err = evaluate_dataset(&hashed(), &view, &mode, ScoringStrategy::default(), &opts(1)).unwrap_err();
    assert!(matches!(err, GradingError::ExemplarLeak(_)));
    let other = common::view(Language::Es, 3);
    let mode = GradingMode::few_shot(vec![Exemplar::from(&other.items[0])]);
    let run = evaluate_dataset(&hashed(), &view, &mode, ScoringStrategy::default(), &opts(1)).unwrap();
    assert_eq!(run.exemplar_ids, vec![other.items[0].item_id.clone()]);
}

struct Flaky {
    inner: MockBackend,
    fail_every: usize,
    calls: std::sync::atomic::AtomicUsize,
}

impl Backend for Flaky {
    fn backend_id(&self) -> &str {
        "flaky"
    }
    fn model(&self) -> &str {
        "m"
    }
    fn complete(&self, request: &ChatRequest) -> Result<Vec<Completion>, ModelError> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if n % self.fail_every == 0 {
            return Err(ModelError::Transport { attempts: 4, message: "reset".into() });
        }
        self.inner.complete(request)
    }
    fn with_model(&self, _: &str) -> Arc<dyn Backend> {
        unimplemented!()
    }
}

#[test]
fn backend_errors_are_tolerated_up_to_five_percent() {
    let view = common::view(Language::En, 20);
    let strategy = ScoringStrategy::new(StrategyKind::LabelLogprob);
    let few = Flaky { inner: hashed(), fail_every: 20, calls: Default::default() };
    let run = evaluate_dataset(&few, &view, &GradingMode::zero_shot(), strategy, &opts(1)).unwrap();
    assert_eq!(run.backend_errors, 2);
    let many = Flaky { inner: hashed(), fail_every: 10, calls: Default::default() };
    let err = evaluate_dataset(&many, &view, &GradingMode::zero_shot(), strategy, &opts(1)).unwrap_err();
    assert!(matches!(err, GradingError::TooManyBackendErrors { failed: 4, total: 40 }));
}

#[test]
fn every_call_is_transcribed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let t = Arc::new(Transcript::open(&path, Clock::Fixed("T".into())).unwrap());
    let b = LoggedBackend::new(Arc::new(hashed()), t);
    let view = common::view(Language::Cs, 6);
    evaluate_dataset(&b, &view, &GradingMode::zero_shot(), ScoringStrategy::default(), &opts(3)).unwrap();
    let entries = Transcript::read(&path).unwrap();
    assert_eq!(entries.len(), 12);
    assert!(entries.iter().all(|e| e.request.want_logprobs && e.request.temperature == 0.0 && e.timestamp == "T"));
}
