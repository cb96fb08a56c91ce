//! Declarative experiments: one TOML file names the corpus, backends, seeds and
//! sizes, and each experiment runs every stage it needs, reusing finished work.

mod demo;
mod experiment;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use demo::{demo_concepts, generator_script, grader_script, write_demo_workspace, DemoConcept, DEMO_BATCHES};
pub use experiment::{plan_stages, run_experiment, Experiment, ExperimentOutcome};

use crate::codemix::{CodemixError, Lexicons};
use crate::corpus::{
    load_dataset, make_splits, CorpusError, DatasetView, Label, Language, ParallelGroup, Split, SplitAssignment,
    SplitSizes,
};
use crate::finetune::{
    config_registry, launch, read_manifest, write_manifest, AdapterParams, CommandTrainer, FinetuneError, MockTrainer,
    RegistryOptions, RunManifest, RunStatus, Trainer,
};
use crate::grading::{evaluate_dataset, EvalOptions, EvalRun, Exemplar, GradingError, GradingMode, ScoringStrategy};
use crate::modelio::{Backend, BackendConfig, LoggedBackend, ModelError, Transcript};
use crate::reporting::ReportError;
use crate::synthesis::{generate_corpus, GenerationPlan, ResumeToken, SynthesisError};
use crate::util::{seeded_rng, Clock};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("missing prerequisite stage `{stage}`: {detail}")]
    MissingPrerequisite { stage: String, detail: String },
    #[error("unknown experiment `{0}` (expected baseline_zero_shot, spanglish_improvement or cross_lingual_transfer)")]
    UnknownExperiment(String),
    #[error("not enough {language} items in the validation split for {wanted} exemplars")]
    TooFewExemplars { language: Language, wanted: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Codemix(#[from] CodemixError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grading(#[from] GradingError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub work: PathBuf,
    /// Directory holding `lex.en.txt` and `lex.es.txt`; the shipped lists otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicons: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub split: u64,
    #[serde(default)]
    pub mix: u64,
    #[serde(default)]
    pub sample: u64,
    #[serde(default)]
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingSettings {
    #[serde(default)]
    pub strategy: ScoringStrategy,
    #[serde(default = "default_exemplars")]
    pub few_shot_exemplars: usize,
    /// Check computed cells against the reference fixture.
    #[serde(default)]
    pub compare_to_reference: bool,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Reference fixture file; the shipped one otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

fn default_exemplars() -> usize {
    GradingMode::DEFAULT_EXEMPLARS
}

fn default_tolerance() -> f64 {
    0.005
}

impl Default for GradingSettings {
    fn default() -> Self {
        Self {
            strategy: ScoringStrategy::default(),
            few_shot_exemplars: default_exemplars(),
            compare_to_reference: false,
            tolerance: default_tolerance(),
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerSettings {
    Mock {
        #[serde(default)]
        fail_configs: BTreeSet<String>,
    },
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for TrainerSettings {
    fn default() -> Self {
        TrainerSettings::Mock { fail_configs: BTreeSet::new() }
    }
}

impl TrainerSettings {
    pub fn build(&self) -> Box<dyn Trainer> {
        match self {
            TrainerSettings::Mock { fail_configs } => Box::new(MockTrainer { fail_configs: fail_configs.clone() }),
            TrainerSettings::Command { program, args } => {
                Box::new(CommandTrainer { program: program.clone(), args: args.clone() })
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            TrainerSettings::Mock { .. } => "mock trainer".into(),
            TrainerSettings::Command { program, .. } => format!("command `{program}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSettings {
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub adapter: AdapterParams,
    #[serde(default)]
    pub trainer: TrainerSettings,
}

fn default_train_size() -> usize {
    150
}
fn default_epochs() -> u32 {
    3
}
fn default_lr() -> f64 {
    2e-4
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self {
            train_size: default_train_size(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            adapter: AdapterParams::default(),
            trainer: TrainerSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<BackendConfig>,
    #[serde(default)]
    pub graders: Vec<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Fixed timestamp for manifests and transcripts; wall-clock time otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<String>,
    pub paths: Paths,
    #[serde(default)]
    pub seeds: Seeds,
    pub splits: SplitSizes,
    #[serde(default)]
    pub grading: GradingSettings,
    #[serde(default)]
    pub finetune: FinetuneSettings,
    pub backends: Backends,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationPlan>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parse a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Config { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.paths.corpus);
        resolve(base, &mut self.paths.work);
        if let Some(p) = self.paths.lexicons.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.grading.reference.as_mut() {
            resolve(base, p);
        }
        for b in self.backends.generator.iter_mut().chain(self.backends.graders.iter_mut()) {
            if let Some(p) = b.mock_script.as_mut() {
                resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for g in &self.backends.graders {
            if g.backend_id.is_empty() || !ids.insert(g.backend_id.as_str()) {
                return Err(format!("grader ids must be non-empty and unique (`{}`)", g.backend_id));
            }
        }
        if self.splits.total() == 0 {
            return Err("split sizes are all zero".into());
        }
        if let Some(plan) = &self.generation {
            plan.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn clock(&self) -> Clock {
        match &self.clock {
            Some(ts) => Clock::Fixed(ts.clone()),
            None => Clock::System,
        }
    }

    pub fn lexicons(&self) -> Result<Lexicons, PipelineError> {
        Ok(match &self.paths.lexicons {
            Some(dir) => Lexicons::from_dir(dir)?,
            None => Lexicons::builtin(),
        })
    }

    pub fn transcript_path(&self, backend_id: &str) -> PathBuf {
        self.paths.work.join("transcripts").join(format!("{backend_id}.jsonl"))
    }

    pub fn splits_path(&self) -> PathBuf {
        self.paths.work.join("splits.json")
    }

    pub fn finetune_dir(&self, backend_id: &str) -> PathBuf {
        self.paths.work.join("finetune").join(backend_id)
    }

    pub fn runs_dir(&self, experiment: &str) -> PathBuf {
        self.paths.work.join("runs").join(experiment)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.work.join("reports")
    }

    /// Build `config` with every call appended to its transcript.
    pub fn backend(&self, config: &BackendConfig) -> Result<Arc<dyn Backend>, PipelineError> {
        let inner = config.build()?;
        let path = self.transcript_path(&config.backend_id);
        let transcript = Transcript::open(&path, self.clock()).map_err(|e| io_err(&path, e))?;
        Ok(Arc::new(LoggedBackend::new(inner, Arc::new(transcript))))
    }

    pub fn grader(&self, backend_id: &str) -> Option<&BackendConfig> {
        self.backends.graders.iter().find(|g| g.backend_id == backend_id)
    }
}

/// Load the corpus, generating it first when a generation plan is configured
/// and generation has not finished.
pub fn ensure_corpus(cfg: &PipelineConfig, lexicons: &Lexicons) -> Result<Vec<ParallelGroup>, PipelineError> {
    let corpus = &cfg.paths.corpus;
    let resuming = ResumeToken::path_for(corpus).exists();
    if corpus.exists() && !resuming {
        return Ok(load_dataset(corpus)?);
    }
    let (Some(plan), Some(generator)) = (&cfg.generation, &cfg.backends.generator) else {
        return Err(PipelineError::MissingPrerequisite {
            stage: "generate".into(),
            detail: format!("{} does not exist and no generation plan and generator are configured", corpus.display()),
        });
    };
    if let Some(dir) = corpus.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let backend = cfg.backend(generator)?;
    let outcome = generate_corpus(backend.as_ref(), plan, lexicons, Some(corpus))?;
    Ok(outcome.groups)
}

/// Stratified splits, written to the work directory.
pub fn ensure_splits(cfg: &PipelineConfig, groups: &[ParallelGroup]) -> Result<SplitAssignment, PipelineError> {
    let splits = make_splits(groups, cfg.splits, cfg.seeds.split)?;
    let path = cfg.splits_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&splits).expect("splits serialize") + "\n";
    crate::util::write_if_changed(&path, text.as_bytes()).map_err(|e| io_err(&path, e))?;
    Ok(splits)
}

/// One view per language over the groups in `split`.
pub fn split_views(
    groups: &[ParallelGroup],
    splits: &SplitAssignment,
    split: Split,
) -> BTreeMap<Language, DatasetView> {
    let members = splits.select(groups, split);
    Language::ALL.iter().map(|l| (*l, DatasetView::from_groups(members.iter().copied(), *l))).collect()
}

/// `count` exemplars from `view`, alternating acceptable and unacceptable.
pub fn sample_exemplars(view: &DatasetView, count: usize, seed: u64) -> Result<Vec<Exemplar>, PipelineError> {
    use rand::seq::SliceRandom;
    let language = view.language().unwrap_or(Language::En);
    let mut rng = seeded_rng(seed, "exemplars");
    let mut pools: Vec<Vec<&crate::corpus::Item>> = [Label::Acceptable, Label::Unacceptable]
        .iter()
        .map(|l| view.items.iter().filter(|i| i.label == *l).collect())
        .collect();
    for p in &mut pools {
        p.shuffle(&mut rng);
        p.reverse();
    }
    let mut out = Vec::with_capacity(count);
    let mut side = 0;
    while out.len() < count {
        let item = pools[side].pop().or_else(|| pools[1 - side].pop());
        match item {
            Some(i) => out.push(Exemplar::from(i)),
            None => return Err(PipelineError::TooFewExemplars { language, wanted: count }),
        }
        side = 1 - side;
    }
    Ok(out)
}

/// Evaluate, or reuse the run at `path` when it was produced from the same
/// dataset, backend, model, mode, strategy and seed.
pub fn evaluate_cached(
    backend: &dyn Backend,
    view: &DatasetView,
    mode: &GradingMode,
    strategy: ScoringStrategy,
    options: &EvalOptions,
    path: &Path,
) -> Result<EvalRun, PipelineError> {
    if path.exists() {
        if let Ok(run) = EvalRun::load(path) {
            let exemplar_ids: Vec<String> =
                mode.exemplars.iter().filter_map(|e| e.source_item_id.clone()).collect();
            let same = run.dataset_hash == view.content_hash()
                && run.backend_id == backend.backend_id()
                && run.model == backend.model()
                && run.model_config == options.model_config
                && run.mode == mode.kind
                && run.strategy_requested == strategy.kind
                && run.seed == options.seed
                && run.exemplar_ids == exemplar_ids;
            if same {
                log::info!("reusing {}", path.display());
                return Ok(run);
            }
        }
    }
    let run = evaluate_dataset(backend, view, mode, strategy, options)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    run.save(path)?;
    Ok(run)
}

/// Build the six training configurations for `grader` and train whichever are
/// not finished. Returns each configuration's manifest in registry order.
pub fn ensure_finetuned(
    cfg: &PipelineConfig,
    grader: &BackendConfig,
    train_views: &BTreeMap<Language, DatasetView>,
) -> Result<Vec<RunManifest>, PipelineError> {
    let dir = cfg.finetune_dir(&grader.backend_id);
    let base_model = if grader.model_name.is_empty() { grader.backend_id.clone() } else { grader.model_name.clone() };
    let options = RegistryOptions {
        base_model,
        train_size: cfg.finetune.train_size,
        seed: cfg.seeds.mix,
        epochs: cfg.finetune.epochs,
        learning_rate: cfg.finetune.learning_rate,
        adapter: cfg.finetune.adapter.clone(),
    };
    let trainer = cfg.finetune.trainer.build();
    let clock = cfg.clock();
    let mut out = Vec::new();
    for (config, _) in config_registry(train_views, &options, &dir)? {
        let path = dir.join(format!("{}.manifest.json", config.config_name));
        let existing = if path.exists() { Some(read_manifest(&path)?) } else { None };
        match existing {
            Some(m) if m.config == config => {}
            Some(_) => {
                log::warn!("{}: configuration changed; starting a new run", path.display());
                write_manifest(&RunManifest::new(config, &clock), &path)?;
            }
            None => write_manifest(&RunManifest::new(config, &clock), &path)?,
        }
        let manifest = read_manifest(&path)?;
        let manifest = match manifest.status {
            RunStatus::Pending | RunStatus::Running => launch(trainer.as_ref(), &path)?,
            _ => manifest,
        };
        out.push(manifest);
    }
    Ok(out)
}

fn trainer_summary(cfg: &PipelineConfig) -> String {
    cfg.finetune.trainer.describe()
}
