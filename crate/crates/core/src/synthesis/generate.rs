use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    attach_translations, build_generation_prompt, build_translation_prompt, parse_generation_output,
    parse_translation_output, quality_gate, with_feedback, BatchContext, GateReport, GateStage, GenerationPlan,
    SynthesisError, Violation,
};
use crate::codemix::Lexicons;
use crate::corpus::{load_dataset, save_dataset, Language, ParallelGroup};
use crate::modelio::{complete, Backend, ChatRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeToken {
    pub plan_hash: String,
    pub completed_batch_ids: Vec<String>,
}

impl ResumeToken {
    pub fn path_for(corpus: &Path) -> PathBuf {
        corpus.with_extension("resume.json")
    }
}

fn gates_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("gates.jsonl")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub groups: Vec<ParallelGroup>,
    /// Every gate evaluation, failed attempts included, in order.
    pub reports: Vec<GateReport>,
    pub reprompts: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthesisError {
    SynthesisError::Io { path: path.display().to_string(), message: e.to_string() }
}

struct Store<'a> {
    corpus: &'a Path,
}

impl Store<'_> {
    fn load(&self, plan_hash: &str) -> Result<(Vec<ParallelGroup>, BTreeSet<String>), SynthesisError> {
        let token_path = ResumeToken::path_for(self.corpus);
        if !token_path.exists() {
            return Ok((Vec::new(), BTreeSet::new()));
        }
        let text = std::fs::read_to_string(&token_path).map_err(|e| io_err(&token_path, e))?;
        let token: ResumeToken = serde_json::from_str(&text).map_err(|e| io_err(&token_path, e))?;
        if token.plan_hash != plan_hash {
            return Err(SynthesisError::PlanChanged);
        }
        let groups = if self.corpus.exists() { load_dataset(self.corpus)? } else { Vec::new() };
        Ok((groups, token.completed_batch_ids.into_iter().collect()))
    }

    fn append_reports(&self, reports: &[GateReport]) -> Result<(), SynthesisError> {
        let path = gates_path(self.corpus);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        for r in reports {
            let line = serde_json::to_string(r).expect("reports serialize");
            writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    fn commit(
        &self,
        groups: &[ParallelGroup],
        completed: &BTreeSet<String>,
        plan_hash: &str,
        reports: &[GateReport],
    ) -> Result<(), SynthesisError> {
        save_dataset(groups, self.corpus)?;
        self.append_reports(reports)?;
        self.write_token(completed, plan_hash)
    }

    fn write_token(&self, completed: &BTreeSet<String>, plan_hash: &str) -> Result<(), SynthesisError> {
        let token = ResumeToken { plan_hash: plan_hash.to_string(), completed_batch_ids: completed.iter().cloned().collect() };
        let path = ResumeToken::path_for(self.corpus);
        let text = serde_json::to_string_pretty(&token).expect("tokens serialize") + "\n";
        crate::util::write_if_changed(&path, text.as_bytes()).map_err(|e| io_err(&path, e))?;
        Ok(())
    }
}

enum StageResult<T> {
    Accepted(T),
    Exhausted(Vec<Violation>),
}

/// Request, check, and re-request with the violations attached, up to the cap.
fn run_stage<T>(
    backend: &dyn Backend,
    base: ChatRequest,
    plan: &GenerationPlan,
    batch_id: &str,
    stage: GateStage,
    reports: &mut Vec<GateReport>,
    reprompts: &mut usize,
    mut check: impl FnMut(&str) -> Result<T, Vec<Violation>>,
) -> Result<StageResult<T>, SynthesisError> {
    let mut violations: Vec<Violation> = Vec::new();
    for attempt in 0..=plan.max_reprompts {
        let mut request = if attempt == 0 { base.clone() } else { with_feedback(&base, &violations) };
        if attempt > 0 {
            *reprompts += 1;
        }
        request.temperature = plan.temperature;
        request.max_tokens = 4096;
        let completion = complete(backend, &request)?;
        let outcome = check(&completion.text);
        violations = match &outcome {
            Ok(_) => Vec::new(),
            Err(v) => v.clone(),
        };
        reports.push(GateReport {
            batch_id: batch_id.to_string(),
            stage: stage.clone(),
            attempt,
            pass: outcome.is_ok(),
            violations: violations.clone(),
        });
        if let Ok(value) = outcome {
            return Ok(StageResult::Accepted(value));
        }
        log::info!("batch {batch_id} {stage:?} attempt {attempt} rejected: {} violation(s)", violations.len());
    }
    Ok(StageResult::Exhausted(violations))
}

fn translate_batch(
    backend: &dyn Backend,
    plan: &GenerationPlan,
    lexicons: &Lexicons,
    mut groups: Vec<ParallelGroup>,
    batch_index: usize,
    reports: &mut Vec<GateReport>,
    reprompts: &mut usize,
) -> Result<StageResult<Vec<ParallelGroup>>, SynthesisError> {
    let batch_id = groups[0].provenance.batch_id.clone();
    for (target, hint) in [(Language::Es, None), (Language::Cs, Some(plan.ratio_hint(batch_index)))] {
        if groups.iter().all(|g| g.variants.contains_key(&target)) {
            continue;
        }
        let request = build_translation_prompt(&groups, target, hint)?;
        let current = groups.clone();
        let result = run_stage(
            backend,
            request,
            plan,
            &batch_id,
            GateStage::Translation(target),
            reports,
            reprompts,
            |text| {
                parse_translation_output(text)
                    .and_then(|parsed| attach_translations(&current, &parsed, target, lexicons, plan.cs_threshold))
                    .map_err(|e| vec![Violation::Translation { message: e.to_string() }])
            },
        )?;
        match result {
            StageResult::Accepted(g) => groups = g,
            StageResult::Exhausted(v) => return Ok(StageResult::Exhausted(v)),
        }
    }
    Ok(StageResult::Accepted(groups))
}

fn exhausted(batch_id: &str, plan: &GenerationPlan, violations: &[Violation], corpus: Option<&Path>) -> SynthesisError {
    SynthesisError::RetryCapExhausted {
        batch_id: batch_id.to_string(),
        attempts: plan.max_reprompts + 1,
        violations: violations.iter().map(Violation::describe).collect::<Vec<_>>().join("; "),
        resume: corpus.map(|c| ResumeToken::path_for(c).display().to_string()).unwrap_or_else(|| "(not persisted)".into()),
    }
}

/// Generate, gate and translate `plan.batches` batches in order.
///
/// With `corpus` set, each accepted batch is persisted together with its gate
/// reports and a resume token; a later call with the same plan skips finished batches.
pub fn generate_corpus(
    backend: &dyn Backend,
    plan: &GenerationPlan,
    lexicons: &Lexicons,
    corpus: Option<&Path>,
) -> Result<GenerationOutcome, SynthesisError> {
    plan.validate()?;
    let plan_hash = plan.plan_hash();
    let store = corpus.map(|c| Store { corpus: c });
    let (mut groups, mut completed) = match &store {
        Some(s) => s.load(&plan_hash)?,
        None => (Vec::new(), BTreeSet::new()),
    };
    let mut all_reports = Vec::new();
    let mut reprompts = 0;

    for index in 0..plan.batches {
        let batch_id = GenerationPlan::batch_id(index);
        if completed.contains(&batch_id) {
            continue;
        }
        let (subject, grade) = plan.batch_target(index);
        let ctx = BatchContext { subject, grade, batch_id: batch_id.clone(), generator_id: plan.generator_id.clone() };
        let exclude: BTreeSet<String> = groups.iter().map(|g| g.topic.to_lowercase()).collect();
        let request = build_generation_prompt(subject, grade, plan.batch_size, &exclude);
        let mut reports = Vec::new();

        let english = run_stage(
            backend,
            request,
            plan,
            &batch_id,
            GateStage::Generation,
            &mut reports,
            &mut reprompts,
            |text| match parse_generation_output(text, &ctx) {
                Ok(batch) => {
                    let report = quality_gate(&batch, &plan.gate_thresholds, &groups);
                    if report.pass { Ok(batch) } else { Err(report.violations) }
                }
                Err(e) => Err(vec![Violation::Unparseable { message: e.to_string() }]),
            },
        )?;
        let translated = match english {
            StageResult::Accepted(batch) => {
                translate_batch(backend, plan, lexicons, batch, index, &mut reports, &mut reprompts)?
            }
            StageResult::Exhausted(v) => StageResult::Exhausted(v),
        };
        let batch = match translated {
            StageResult::Accepted(batch) => batch,
            StageResult::Exhausted(v) => {
                if let Some(s) = &store {
                    s.append_reports(&reports)?;
                    s.write_token(&completed, &plan_hash)?;
                }
                return Err(exhausted(&batch_id, plan, &v, corpus));
            }
        };
        groups.extend(batch);
        completed.insert(batch_id);
        if let Some(s) = &store {
            s.commit(&groups, &completed, &plan_hash, &reports)?;
        }
        all_reports.extend(reports);
    }
    Ok(GenerationOutcome { groups, reports: all_reports, reprompts })
}

/// Fill missing Spanish and Spanglish variants of an existing corpus, batch by batch.
pub fn translate_corpus(
    backend: &dyn Backend,
    plan: &GenerationPlan,
    lexicons: &Lexicons,
    groups: Vec<ParallelGroup>,
) -> Result<GenerationOutcome, SynthesisError> {
    let mut batch_order: Vec<String> = Vec::new();
    for g in &groups {
        if !batch_order.contains(&g.provenance.batch_id) {
            batch_order.push(g.provenance.batch_id.clone());
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    let mut reports = Vec::new();
    let mut reprompts = 0;
    for (index, batch_id) in batch_order.iter().enumerate() {
        let batch: Vec<ParallelGroup> = groups.iter().filter(|g| &g.provenance.batch_id == batch_id).cloned().collect();
        match translate_batch(backend, plan, lexicons, batch, index, &mut reports, &mut reprompts)? {
            StageResult::Accepted(b) => out.extend(b),
            StageResult::Exhausted(v) => return Err(exhausted(batch_id, plan, &v, None)),
        }
    }
    Ok(GenerationOutcome { groups: out, reports, reprompts })
}
