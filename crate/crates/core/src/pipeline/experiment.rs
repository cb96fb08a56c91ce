use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use super::{
    ensure_corpus, ensure_finetuned, ensure_splits, evaluate_cached, io_err, sample_exemplars, split_views,
    trainer_summary, PipelineConfig, PipelineError,
};
use crate::corpus::{DatasetView, Language, Split};
use crate::finetune::{registry_mixes, RunStatus};
use crate::grading::{EvalOptions, EvalRun, GradingMode, ModeKind};
use crate::modelio::{Backend, BackendConfig};
use crate::reporting::{
    improvements_report, regression_check, render, run_lookup, runs_bundle, Format, ImprovementSpec,
    ReferenceFixture, ReportBundle,
};
use crate::synthesis::ResumeToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    BaselineZeroShot,
    SpanglishImprovement,
    CrossLingualTransfer,
}

impl Experiment {
    pub const ALL: [Experiment; 3] =
        [Experiment::BaselineZeroShot, Experiment::SpanglishImprovement, Experiment::CrossLingualTransfer];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::BaselineZeroShot => "baseline_zero_shot",
            Experiment::SpanglishImprovement => "spanglish_improvement",
            Experiment::CrossLingualTransfer => "cross_lingual_transfer",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Experiment::BaselineZeroShot => "Zero-shot baseline by language",
            Experiment::SpanglishImprovement => "Zero-shot, few-shot and fine-tuned grading",
            Experiment::CrossLingualTransfer => "Cross-lingual transfer of fine-tuning",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, PipelineError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub experiment: Experiment,
    pub bundle: ReportBundle,
    pub runs: Vec<EvalRun>,
    /// Stages that finished unsuccessfully, e.g. failed training runs.
    pub failures: Vec<String>,
    pub report_paths: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty() && self.bundle.checks_pass()
    }
}

/// One scored cell to produce.
struct Job<'a> {
    backend: std::sync::Arc<dyn Backend>,
    max_in_flight: usize,
    model_config: String,
    mode: GradingMode,
    view: &'a DatasetView,
}

fn graders(cfg: &PipelineConfig, experiment: Experiment) -> Result<Vec<&BackendConfig>, PipelineError> {
    if cfg.backends.graders.is_empty() {
        return Err(PipelineError::MissingPrerequisite {
            stage: "evaluate".into(),
            detail: "no grader backends are configured".into(),
        });
    }
    Ok(match experiment {
        Experiment::CrossLingualTransfer => vec![&cfg.backends.graders[0]],
        _ => cfg.backends.graders.iter().collect(),
    })
}

fn ft_config(backend: &str) -> String {
    format!("{backend}-finetuned")
}

/// Human-readable list of the stages `run_experiment` would execute.
pub fn plan_stages(experiment: Experiment, cfg: &PipelineConfig) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::new();
    let corpus = &cfg.paths.corpus;
    let resuming = ResumeToken::path_for(corpus).exists();
    out.push(match (&cfg.generation, corpus.exists() && !resuming) {
        (_, true) => format!("corpus: load {}", corpus.display()),
        (Some(plan), false) => format!(
            "corpus: {} {} batches of {} into {}",
            if resuming { "resume generating" } else { "generate" },
            plan.batches,
            plan.batch_size,
            corpus.display()
        ),
        (None, false) => format!("corpus: MISSING {} (no generation plan)", corpus.display()),
    });
    out.push(format!(
        "splits: train {} / val {} / test {} (seed {}) -> {}",
        cfg.splits.train,
        cfg.splits.val,
        cfg.splits.test,
        cfg.seeds.split,
        cfg.splits_path().display()
    ));
    let graders = graders(cfg, experiment)?;
    let needs_ft = experiment != Experiment::BaselineZeroShot;
    if needs_ft {
        let names: Vec<&str> = registry_mixes(cfg.finetune.train_size)?.into_iter().map(|(n, _)| n).collect();
        for g in &graders {
            out.push(format!(
                "finetune: {} configs {} ({} items each, {}) -> {}",
                g.backend_id,
                names.join(", "),
                cfg.finetune.train_size,
                trainer_summary(cfg),
                cfg.finetune_dir(&g.backend_id).display()
            ));
        }
    }
    let runs_dir = cfg.runs_dir(experiment.as_str());
    let mut cell = |config: &str, mode: ModeKind| {
        for l in Language::ALL {
            out.push(format!("evaluate: {config} {mode} {l} -> {}", runs_dir.display()));
        }
    };
    for g in &graders {
        let id = g.backend_id.as_str();
        match experiment {
            Experiment::BaselineZeroShot => cell(id, ModeKind::ZeroShot),
            Experiment::SpanglishImprovement => {
                cell(&format!("{id}-zero_shot"), ModeKind::ZeroShot);
                cell(&format!("{id}-few_shot"), ModeKind::FewShot);
                cell(&ft_config(id), ModeKind::Finetuned);
            }
            Experiment::CrossLingualTransfer => {
                cell("baseline", ModeKind::ZeroShot);
                for (name, _) in registry_mixes(cfg.finetune.train_size)? {
                    cell(name, ModeKind::Finetuned);
                }
            }
        }
    }
    let reports = cfg.reports_dir();
    out.push(format!(
        "report: {} and {}",
        reports.join(format!("{experiment}.md")).display(),
        reports.join(format!("{experiment}.json")).display()
    ));
    Ok(out)
}

fn spec(label: String, base: String, new: String) -> ImprovementSpec {
    ImprovementSpec { label, base, new, reported: None, approximate: false, source: String::new() }
}

/// Run every stage of `experiment`, then write its report.
pub fn run_experiment(experiment: Experiment, cfg: &PipelineConfig) -> Result<ExperimentOutcome, PipelineError> {
    let graders = graders(cfg, experiment)?;
    let lexicons = cfg.lexicons()?;
    let groups = ensure_corpus(cfg, &lexicons)?;
    let splits = ensure_splits(cfg, &groups)?;
    let test = split_views(&groups, &splits, Split::Test);
    let mut failures = Vec::new();
    let mut jobs: Vec<Job> = Vec::new();
    let mut specs = Vec::new();

    for g in &graders {
        let backend = cfg.backend(g)?;
        let id = g.backend_id.as_str();
        let zero = |config: String| Language::ALL.map(|l| (config.clone(), GradingMode::zero_shot(), l));
        let mut cells: Vec<(String, GradingMode, Language, Option<String>)> = Vec::new();
        match experiment {
            Experiment::BaselineZeroShot => {
                cells.extend(zero(id.to_string()).into_iter().map(|(c, m, l)| (c, m, l, None)));
            }
            Experiment::SpanglishImprovement => {
                let val = split_views(&groups, &splits, Split::Val);
                cells.extend(zero(format!("{id}-zero_shot")).into_iter().map(|(c, m, l)| (c, m, l, None)));
                for l in Language::ALL {
                    let ex = sample_exemplars(&val[&l], cfg.grading.few_shot_exemplars, cfg.seeds.sample)?;
                    cells.push((format!("{id}-few_shot"), GradingMode::few_shot(ex), l, None));
                }
                let train = split_views(&groups, &splits, Split::Train);
                let manifests = ensure_finetuned(cfg, g, &train)?;
                let cs = manifests.iter().find(|m| m.config.config_name == "cs").expect("registry has cs");
                match (&cs.status, &cs.artifact_ref) {
                    (RunStatus::Complete, Some(a)) => {
                        for l in Language::ALL {
                            cells.push((ft_config(id), GradingMode::finetuned(), l, Some(a.clone())));
                        }
                    }
                    _ => failures.push(format!("{id}: fine-tuning `cs` did not complete: {}", cs.error.as_deref().unwrap_or("unknown"))),
                }
                let key = |cfg: &str, mode: ModeKind| format!("{cfg}.{mode}.cs");
                let ft = key(&ft_config(id), ModeKind::Finetuned);
                let zs = key(&format!("{id}-zero_shot"), ModeKind::ZeroShot);
                let fs = key(&format!("{id}-few_shot"), ModeKind::FewShot);
                specs.push(spec(format!("{id}: zero-shot to few-shot on Spanglish"), zs.clone(), fs.clone()));
                specs.push(spec(format!("{id}: zero-shot to fine-tuned on Spanglish"), zs, ft.clone()));
                specs.push(spec(format!("{id}: few-shot to fine-tuned on Spanglish"), fs, ft));
            }
            Experiment::CrossLingualTransfer => {
                cells.extend(zero("baseline".into()).into_iter().map(|(c, m, l)| (c, m, l, None)));
                let train = split_views(&groups, &splits, Split::Train);
                for m in ensure_finetuned(cfg, g, &train)? {
                    let name = m.config.config_name.clone();
                    match (&m.status, &m.artifact_ref) {
                        (RunStatus::Complete, Some(a)) => {
                            for l in Language::ALL {
                                cells.push((name.clone(), GradingMode::finetuned(), l, Some(a.clone())));
                            }
                            specs.push(spec(
                                format!("{name} fine-tuning on Spanglish"),
                                "baseline.zero_shot.cs".into(),
                                format!("{name}.finetuned.cs"),
                            ));
                        }
                        _ => failures.push(format!(
                            "{id}: fine-tuning `{name}` did not complete: {}",
                            m.error.as_deref().unwrap_or("unknown")
                        )),
                    }
                }
            }
        }
        for (model_config, mode, language, artifact) in cells {
            let backend = match &artifact {
                Some(a) => backend.with_model(a),
                None => backend.clone(),
            };
            jobs.push(Job { backend, max_in_flight: g.max_in_flight, model_config, mode, view: &test[&language] });
        }
    }

    let runs_dir = cfg.runs_dir(experiment.as_str());
    let mut runs = Vec::with_capacity(jobs.len());
    for job in &jobs {
        let language = job.view.language().unwrap_or(Language::En);
        let path = runs_dir.join(format!("{}-{}-{language}.json", job.model_config, job.mode.kind));
        let options = EvalOptions {
            seed: cfg.seeds.eval,
            max_in_flight: job.max_in_flight,
            model_config: job.model_config.clone(),
        };
        runs.push(evaluate_cached(job.backend.as_ref(), job.view, &job.mode, cfg.grading.strategy, &options, &path)?);
    }

    let improvements = improvements_report(&specs, run_lookup(&runs))?;
    let mut bundle = runs_bundle(experiment.title(), &runs, improvements)?;
    if cfg.grading.compare_to_reference {
        let fixture = match &cfg.grading.reference {
            Some(p) => ReferenceFixture::load(p)?,
            None => ReferenceFixture::builtin(),
        };
        bundle.checks = regression_check(&bundle, &fixture, cfg.grading.tolerance);
        bundle.provenance.fixture_id = Some(fixture.fixture_id);
    }

    let dir = cfg.reports_dir();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut report_paths = Vec::new();
    for (ext, format) in [("md", Format::Markdown), ("json", Format::Json)] {
        let path = dir.join(format!("{experiment}.{ext}"));
        crate::util::write_if_changed(&path, render(&bundle, format).as_bytes()).map_err(|e| io_err(&path, e))?;
        report_paths.push(path);
    }
    Ok(ExperimentOutcome { experiment, bundle, runs, failures, report_paths })
}
