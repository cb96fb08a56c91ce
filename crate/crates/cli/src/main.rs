use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use codeswitch_grader::annotation::{
    acceptance_decision, agreement_metrics, make_translation_assignments, review_items, review_session,
    sample_for_label_review, AcceptanceThresholds, Adjudication, RatingStore, ReviewAssignment, Task,
};
use codeswitch_grader::codemix::{classify_language, Lexicons};
use codeswitch_grader::corpus::{compose_mix, corpus_stats, load_dataset, MixSpec, Split};
use codeswitch_grader::finetune::RunStatus;
use codeswitch_grader::grading::{EvalOptions, EvalRun, GradingMode, ScoringStrategy, StrategyKind};
use codeswitch_grader::modelio::{BackendConfig, LoggedBackend, Transcript};
use codeswitch_grader::pipeline::{
    ensure_corpus, ensure_finetuned, ensure_splits, evaluate_cached, plan_stages, run_experiment, sample_exemplars,
    split_views, write_demo_workspace, Experiment, PipelineConfig,
};
use codeswitch_grader::reporting::{
    fixture_bundle, regression_check, render, runs_bundle, Format, ReferenceFixture,
};
use codeswitch_grader::synthesis::{quality_gate, translate_corpus, GateThresholds};
use codeswitch_grader::util::Clock;
use codeswitch_grader::{DatasetView, Language, ParallelGroup};

#[derive(Parser)]
#[command(name = "csgrade", version, about = "Build bilingual grading corpora and evaluate graders on them")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an offline demo workspace (mock backends and trainer) into DIR.
    InitDemo { dir: PathBuf },
    /// Run a named experiment end to end: baseline_zero_shot, spanglish_improvement,
    /// cross_lingual_transfer, or all.
    Experiment {
        name: String,
        #[arg(long)]
        config: PathBuf,
        /// Print the stages without running them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Generate, gate and translate the corpus described by the config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
    /// Add Spanish and Spanglish variants to an English-only corpus.
    Translate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-run the quality gate and language checks over a corpus.
    Qc {
        #[arg(long)]
        input: PathBuf,
        /// Directory with lex.en.txt and lex.es.txt.
        #[arg(long)]
        lexicons: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        cs_threshold: f64,
    },
    /// Compute the stratified splits for the config's corpus.
    Split {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compose a mixed-language training set from a split.
    Compose {
        #[arg(long)]
        config: PathBuf,
        /// Counts per language, e.g. `en:100,cs:50`.
        #[arg(long)]
        mix: String,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_overlap: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write review assignments for two annotators.
    Assign {
        #[arg(long)]
        corpus: PathBuf,
        /// label_check or translation_check.
        #[arg(long)]
        task: Task,
        /// Two comma-separated annotator ids.
        #[arg(long, value_delimiter = ',', required = true)]
        annotators: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Share of items sampled for the label check.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        /// Language of the label-check sample.
        #[arg(long, default_value = "en")]
        language: Language,
        /// Items per annotator for the translation check.
        #[arg(long, default_value_t = 75)]
        per_annotator: usize,
        /// Items both annotators rate in the translation check.
        #[arg(long, default_value_t = 50)]
        overlap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rate the items of an assignment interactively; ratings are appended to the log.
    Annotate {
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
    },
    /// Agreement metrics and the accept/reject decision.
    Agreement {
        /// Two assignment files of one task, comma-separated (repeatable).
        #[arg(long = "pair", value_delimiter = ',', required = true)]
        pairs: Vec<PathBuf>,
        /// Rating logs (repeatable).
        #[arg(long = "ratings", required = true)]
        ratings: Vec<PathBuf>,
        /// JSON map item -> metric -> value resolving disagreements.
        #[arg(long)]
        adjudication: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        min_accurateness: f64,
        #[arg(long, default_value_t = 0.95)]
        min_naturalness: f64,
        #[arg(long, default_value_t = 0.95)]
        min_label_correctness: f64,
    },
    /// Score one single-language dataset with one backend.
    Evaluate {
        /// Backend config (JSON).
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// zero_shot, few_shot or finetuned.
        #[arg(long, default_value = "zero_shot")]
        mode: String,
        /// Dataset to draw few-shot exemplars from.
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        n_exemplars: usize,
        /// Model name override, e.g. a fine-tuned adapter.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value = "baseline")]
        model_config: String,
        #[arg(long, default_value = "auto")]
        strategy: StrategyKind,
        #[arg(long, default_value_t = 5)]
        n_samples: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build and train the six fine-tuning configurations for each grader.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
    /// Render result tables from run files, or the reference results alone.
    Report {
        /// Directory of run JSON files; omit to render the reference results.
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "Results")]
        title: String,
        /// Check computed cells against the reference results.
        #[arg(long)]
        compare_to_reference: bool,
        /// Reference results file; the shipped one otherwise.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0.005)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("values serialize"));
}

/// Ok(false) means the command ran but something did not pass.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::InitDemo { dir } => {
            let path = write_demo_workspace(&dir)?;
            println!("wrote {}", path.display());
            println!("next: csgrade experiment all --config {}", path.display());
            Ok(true)
        }
        Command::Experiment { name, config, dry_run } => {
            let cfg = load_config(&config)?;
            let experiments: Vec<Experiment> =
                if name == "all" { Experiment::ALL.to_vec() } else { vec![name.parse()?] };
            let mut ok = true;
            for e in experiments {
                if dry_run {
                    println!("{e}:");
                    for line in plan_stages(e, &cfg)? {
                        println!("  {line}");
                    }
                    continue;
                }
                let out = run_experiment(e, &cfg)?;
                println!("{e}: {} runs", out.runs.len());
                for p in &out.report_paths {
                    println!("  report {}", p.display());
                }
                for f in &out.failures {
                    println!("  FAILED {f}");
                }
                for c in out.bundle.checks.iter().filter(|c| !c.pass) {
                    println!("  check {} computed {:.4} expected {:.3}: FAIL", c.cell, c.computed, c.expected);
                }
                ok &= out.success();
            }
            Ok(ok)
        }
        Command::Generate { config, dry_run } => {
            let cfg = load_config(&config)?;
            if dry_run {
                println!("{}", plan_stages(Experiment::BaselineZeroShot, &cfg)?[0]);
                return Ok(true);
            }
            let groups = ensure_corpus(&cfg, &cfg.lexicons()?)?;
            println!("{} groups in {}", groups.len(), cfg.paths.corpus.display());
            Ok(true)
        }
        Command::Translate { config, input, output } => {
            let cfg = load_config(&config)?;
            let plan = cfg.generation.as_ref().context("the config has no [generation] section")?;
            let generator = cfg.backends.generator.as_ref().context("the config has no generator backend")?;
            let backend = cfg.backend(generator)?;
            let groups = load_dataset(&input)?;
            let out = translate_corpus(backend.as_ref(), plan, &cfg.lexicons()?, groups)?;
            codeswitch_grader::corpus::save_dataset(&out.groups, &output)?;
            println!("{} groups translated ({} re-prompts) -> {}", out.groups.len(), out.reprompts, output.display());
            Ok(true)
        }
        Command::Qc { input, lexicons, cs_threshold } => qc(&input, lexicons.as_deref(), cs_threshold),
        Command::Split { config } => {
            let cfg = load_config(&config)?;
            let groups = ensure_corpus(&cfg, &cfg.lexicons()?)?;
            let splits = ensure_splits(&cfg, &groups)?;
            for s in Split::ALL {
                println!("{s}: {}", splits.members(s).len());
            }
            println!("unassigned: {}", groups.len() - splits.assignments.len());
            println!("-> {}", cfg.splits_path().display());
            Ok(true)
        }
        Command::Compose { config, mix, split, seed, allow_overlap, output } => {
            let cfg = load_config(&config)?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => bail!("unknown split `{other}`"),
            };
            let groups = ensure_corpus(&cfg, &cfg.lexicons()?)?;
            let splits = ensure_splits(&cfg, &groups)?;
            let views = split_views(&groups, &splits, split);
            let spec = MixSpec::parse(&mix, seed.unwrap_or(cfg.seeds.mix))?;
            let view = compose_mix(&views, &spec, allow_overlap)?;
            view.save(&output)?;
            println!("{} items -> {} (sha256 {})", view.len(), output.display(), view.content_hash());
            Ok(true)
        }
        Command::Assign { corpus, task, annotators, out_dir, fraction, language, per_annotator, overlap, seed } => {
            if annotators.len() != 2 {
                bail!("--annotators takes exactly two ids");
            }
            let groups = load_dataset(&corpus)?;
            let names = [annotators[0].as_str(), annotators[1].as_str()];
            let pair = match task {
                Task::LabelCheck => {
                    let view = DatasetView::from_groups(&groups, language);
                    sample_for_label_review(&view, fraction, seed, names)?
                }
                Task::TranslationCheck => {
                    let pool: Vec<String> = review_items(&groups)
                        .into_values()
                        .filter(|i| i.language != Language::En)
                        .map(|i| i.item_id)
                        .collect();
                    make_translation_assignments(&pool, per_annotator, overlap, seed, names)?
                }
            };
            std::fs::create_dir_all(&out_dir)?;
            for a in &pair {
                let path = out_dir.join(format!("{}.{}.json", a.task, a.annotator_id));
                a.save(&path)?;
                println!("{}: {} items ({} shared) -> {}", a.annotator_id, a.item_ids.len(), a.overlap_ids.len(), path.display());
            }
            Ok(true)
        }
        Command::Annotate { assignment, corpus, ratings } => {
            let assignment = ReviewAssignment::load(&assignment)?;
            let items = review_items(&load_dataset(&corpus)?);
            let mut store = RatingStore::open(&ratings, vec![assignment.clone()])?;
            let stdin = std::io::stdin();
            let summary =
                review_session(&mut store, &assignment, &items, &Clock::System, stdin.lock(), std::io::stdout())?;
            println!(
                "rated {}, skipped {}, remaining {}{}",
                summary.rated,
                summary.skipped,
                summary.remaining,
                if summary.quit { " (quit)" } else { "" }
            );
            Ok(true)
        }
        Command::Agreement {
            pairs,
            ratings,
            adjudication,
            min_accurateness,
            min_naturalness,
            min_label_correctness,
        } => {
            if pairs.len() % 2 != 0 {
                bail!("each --pair takes two assignment files");
            }
            let pairs: Vec<[ReviewAssignment; 2]> = pairs
                .chunks(2)
                .map(|c| Ok([ReviewAssignment::load(&c[0])?, ReviewAssignment::load(&c[1])?]))
                .collect::<Result<_>>()?;
            let adjudication: Option<Adjudication> = match adjudication {
                Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?),
                None => None,
            };
            let all: Vec<ReviewAssignment> = pairs.iter().flatten().cloned().collect();
            let store = RatingStore::merge_logs(&ratings, all)?;
            let reports = pairs
                .iter()
                .map(|p| agreement_metrics(&store, p, adjudication.as_ref()))
                .collect::<Result<Vec<_>, _>>()?;
            let thresholds = AcceptanceThresholds { min_accurateness, min_naturalness, min_label_correctness };
            let decision = acceptance_decision(&reports, &thresholds);
            print_json(&serde_json::json!({ "reports": reports, "decision": decision }));
            Ok(decision.accept)
        }
        Command::Evaluate {
            backend,
            dataset,
            mode,
            exemplars,
            n_exemplars,
            model,
            model_config,
            strategy,
            n_samples,
            seed,
            transcript,
            output,
        } => {
            let cfg = BackendConfig::load(&backend)?;
            let mut backend = cfg.build()?;
            if let Some(path) = transcript {
                let t = Transcript::open(&path, Clock::System)?;
                backend = std::sync::Arc::new(LoggedBackend::new(backend, std::sync::Arc::new(t)));
            }
            if let Some(m) = model {
                backend = backend.with_model(&m);
            }
            let view = DatasetView::load(&dataset)?;
            let mode = match mode.as_str() {
                "zero_shot" => GradingMode::zero_shot(),
                "finetuned" => GradingMode::finetuned(),
                "few_shot" => {
                    let path = exemplars.context("--exemplars is required for few_shot")?;
                    GradingMode::few_shot(sample_exemplars(&DatasetView::load(&path)?, n_exemplars, seed)?)
                }
                other => bail!("unknown mode `{other}`"),
            };
            let options = EvalOptions { seed, max_in_flight: cfg.max_in_flight, model_config };
            let strategy = ScoringStrategy { kind: strategy, n_samples };
            let run = evaluate_cached(backend.as_ref(), &view, &mode, strategy, &options, &output)?;
            println!(
                "{} {} {}: AUC {:.4} over {} items ({} parse failures, {} backend errors) -> {}",
                run.model_config,
                run.mode,
                run.language,
                run.auc,
                run.item_scores.len(),
                run.parse_failures,
                run.backend_errors,
                output.display()
            );
            Ok(true)
        }
        Command::Finetune { config, dry_run } => {
            let cfg = load_config(&config)?;
            if dry_run {
                for line in plan_stages(Experiment::CrossLingualTransfer, &cfg)?
                    .into_iter()
                    .filter(|l| l.starts_with("finetune:"))
                {
                    println!("{line}");
                }
                return Ok(true);
            }
            let groups = ensure_corpus(&cfg, &cfg.lexicons()?)?;
            let splits = ensure_splits(&cfg, &groups)?;
            let train = split_views(&groups, &splits, Split::Train);
            let mut ok = true;
            for g in &cfg.backends.graders {
                for m in ensure_finetuned(&cfg, g, &train)? {
                    let status = match m.status {
                        RunStatus::Complete => m.artifact_ref.clone().unwrap_or_default(),
                        other => {
                            ok = false;
                            format!("{other:?}: {}", m.error.as_deref().unwrap_or(""))
                        }
                    };
                    println!("{} {}: {status}", g.backend_id, m.config.config_name);
                }
            }
            Ok(ok)
        }
        Command::Report { runs, format, output, title, compare_to_reference, reference, tolerance } => {
            let format: Format = format.parse()?;
            let fixture = match &reference {
                Some(p) => ReferenceFixture::load(p)?,
                None => ReferenceFixture::builtin(),
            };
            let bundle = match runs {
                None => fixture_bundle(&fixture, tolerance)?,
                Some(dir) => {
                    let runs = EvalRun::load_dir(&dir)?;
                    if runs.is_empty() {
                        bail!("no run files in {}", dir.display());
                    }
                    let mut b = runs_bundle(&title, &runs, Vec::new())?;
                    if compare_to_reference {
                        b.checks = regression_check(&b, &fixture, tolerance);
                        b.provenance.fixture_id = Some(fixture.fixture_id.clone());
                    }
                    b
                }
            };
            let text = render(&bundle, format);
            match output {
                Some(p) => {
                    codeswitch_grader::util::write_if_changed(&p, text.as_bytes())?;
                    println!("-> {}", p.display());
                }
                None => print!("{text}"),
            }
            Ok(bundle.checks_pass())
        }
    }
}

/// Gate each batch against the batches before it and check every variant's language.
fn qc(input: &Path, lexicons: Option<&Path>, cs_threshold: f64) -> Result<bool> {
    let groups = load_dataset(input)?;
    let lex = match lexicons {
        Some(d) => Lexicons::from_dir(d)?,
        None => Lexicons::builtin(),
    };
    let mut order: Vec<String> = Vec::new();
    let mut batches: BTreeMap<String, Vec<ParallelGroup>> = BTreeMap::new();
    for g in &groups {
        if !batches.contains_key(&g.provenance.batch_id) {
            order.push(g.provenance.batch_id.clone());
        }
        batches.entry(g.provenance.batch_id.clone()).or_default().push(g.clone());
    }
    let mut ok = true;
    let mut seen: Vec<ParallelGroup> = Vec::new();
    for id in &order {
        let batch = &batches[id];
        let report = quality_gate(batch, &GateThresholds::default(), &seen);
        if report.pass {
            println!("{id}: pass ({} items)", batch.len());
        } else {
            ok = false;
            for v in &report.violations {
                println!("{id}: FAIL {}", v.describe());
            }
        }
        seen.extend(batch.iter().cloned());
    }
    let mut mislabelled = BTreeSet::new();
    for g in &groups {
        for (lang, v) in &g.variants {
            match classify_language(&v.answer, &lex, cs_threshold) {
                Ok(found) if found == *lang => {}
                Ok(found) => {
                    mislabelled.insert(format!("{}:{lang} reads as {found}", g.group_id));
                }
                Err(e) => {
                    mislabelled.insert(format!("{}:{lang} {e}", g.group_id));
                }
            }
        }
    }
    for m in &mislabelled {
        println!("language: FAIL {m}");
    }
    ok &= mislabelled.is_empty();
    for l in Language::ALL {
        let view = DatasetView::from_groups(&groups, l);
        if !view.is_empty() {
            println!("{l}: {}", serde_json::to_string(&corpus_stats(&view)?)?);
        }
    }
    Ok(ok)
}
