mod backend;
mod config;
mod exit;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use srlf_core::backend::{cache_key, Backend, CacheEntry};
use srlf_core::data::{
    self, generate, histories, parse_amazon, parse_movielens, sample_users, Dataset, ParseOptions, ParseReport,
    SampleMode, SamplingConfig, SyntheticConfig, UserSplit,
};
use srlf_core::eval::{evaluate, render_comparison, render_reference, Bm25Params, EvalConfig, MetricsReport, Ranker};
use srlf_core::seed::sha256_hex;
use srlf_core::template::TemplateSet;
use srlf_core::training::{
    base_descriptions, ExperimentConfig, RunOptions, Trainer, TrainingData, TrainingState, CHECKPOINT_FILE, LOG_FILE,
    STATE_FILE,
};

use backend::BackendArgs;
use config::ConfigArgs;
use exit::{data as data_err, usage, CliError, CliResult};

const CONFIG_FILE: &str = "config.json";
const REPORT_FILE: &str = "report.json";
const INGEST_FILE: &str = "ingest.json";

#[derive(Parser)]
#[command(name = "srlf", version, about = "Set-wise reflective recommendation agent")]
struct Cli {
    /// Worker threads; defaults to the number of processors.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only warnings and errors on standard error.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum DatasetKind {
    Movielens,
    Amazon,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SampleModeArg {
    Dense,
    Sparse,
    Uniform,
}

impl From<SampleModeArg> for SampleMode {
    fn from(value: SampleModeArg) -> Self {
        match value {
            SampleModeArg::Dense => SampleMode::Dense,
            SampleModeArg::Sparse => SampleMode::Sparse,
            SampleModeArg::Uniform => SampleMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Method {
    Srlf,
    Bm25,
    Random,
    Perfect,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw MovieLens or Amazon files into canonical tables.
    Ingest {
        #[arg(long, value_enum)]
        dataset: DatasetKind,
        /// Ratings (MovieLens) or reviews (Amazon) file.
        #[arg(long)]
        ratings: PathBuf,
        /// Movies (MovieLens) or item metadata (Amazon) file.
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        sample_mode: SampleModeArg,
        /// Keep this many sampled users; all users when absent.
        #[arg(long)]
        sample_count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = ParseOptions::default().max_malformed_fraction)]
        max_malformed: f64,
    },
    /// Write a synthetic keyword dataset and its oracle weights.
    SynthFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        flip_probability: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        prompt_bias: Option<f64>,
    },
    /// Run the training loop.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory; a fresh `<hash>-<timestamp>` under --runs when absent.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long, requires = "checkpoint_dir")]
        resume: bool,
        /// Stop after this many users; continue later with --resume.
        #[arg(long)]
        stop_after_users: Option<usize>,
        /// Directory of `<name>.tmpl` overrides.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Evaluate one method on the held-out targets.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "srlf")]
        method: Method,
        /// Trained state; `config.json` next to it is used when present.
        #[arg(long)]
        state: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Row label; defaults to the method name.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every ablation plus the baselines.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge saved reports into one comparison table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect a response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Entry counts per template.
    Stats { file: PathBuf },
    /// Recompute every key for `model`; fails on a mismatch.
    Verify {
        file: PathBuf,
        #[arg(long)]
        model: String,
    },
}

fn main() {
    let cli = Cli::parse();
    let filter = if cli.quiet { "warn" } else { "info" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .init();

    let result = configure_pool(cli.jobs).and_then(|()| run(cli.command));
    if let Err(CliError { code, error }) = result {
        eprintln!("error: {error:#}");
        std::process::exit(code);
    }
}

fn configure_pool(jobs: Option<usize>) -> CliResult<()> {
    let Some(jobs) = jobs else { return Ok(()) };
    if jobs == 0 {
        return Err(usage(anyhow!("--jobs must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(|e| usage(e.into()))
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Ingest { dataset, ratings, meta, out, sample_mode, sample_count, seed, max_malformed } => {
            ingest(dataset, &ratings, &meta, &out, sample_mode.into(), sample_count, seed, max_malformed)
        }
        Command::SynthFixture { out, users, items, seed, flip_probability, noise, prompt_bias } => {
            let d = SyntheticConfig::default();
            let config = SyntheticConfig {
                users: users.unwrap_or(d.users),
                items: items.unwrap_or(d.items),
                seed: seed.unwrap_or(d.seed),
                flip_probability: flip_probability.unwrap_or(d.flip_probability),
                assessment_noise: noise.unwrap_or(d.assessment_noise),
                prompt_bias: prompt_bias.unwrap_or(d.prompt_bias),
                ..d
            };
            let synthetic = generate(&config)?;
            synthetic.dataset.save(&out)?;
            synthetic.save(&out)?;
            write_splits(&synthetic.dataset, &out)?;
            println!(
                "wrote {} interactions, {} items, {} users to {}",
                synthetic.dataset.interactions.len(),
                synthetic.dataset.catalog.len(),
                config.users,
                out.display()
            );
            Ok(())
        }
        Command::Train { data, backend, config, checkpoint_dir, runs, resume, stop_after_users, templates } => {
            let config = config.resolve()?;
            let training = load_data(&data)?;
            let templates = load_templates(templates.as_deref())?;
            let backend = backend::build(&backend, &data)?;
            let run_dir = train(
                &training,
                config,
                backend.as_ref(),
                &templates,
                checkpoint_dir,
                &runs,
                resume,
                stop_after_users,
            )?;
            println!("run directory: {}", run_dir.display());
            Ok(())
        }
        Command::Eval { data, method, state, backend, config, templates, seed, label, out } => {
            let training = load_data(&data)?;
            let mut experiment = config.resolve()?;
            if let Some(saved) = state.as_deref().and_then(|s| s.parent()).map(|d| d.join(CONFIG_FILE)) {
                if saved.is_file() {
                    experiment = read_json(&saved)?;
                    config.apply(&mut experiment);
                }
            }
            let eval = EvalConfig { seed, ..Default::default() };
            let label = label.unwrap_or_else(|| format!("{method:?}").to_lowercase());
            let report = match method {
                Method::Srlf => {
                    let path = state.as_deref().ok_or_else(|| usage(anyhow!("--method srlf needs --state")))?;
                    if !path.is_file() {
                        return Err(usage(anyhow!("no trained state at {}", path.display())));
                    }
                    let state = TrainingState::load(path)?;
                    let templates = load_templates(templates.as_deref())?;
                    let backend = backend::build(&backend, &data)?;
                    eval_agent(&training, &experiment, &state, &templates, backend.as_ref(), &eval, &label)?
                }
                other => eval_baseline(&training, &experiment, other, &eval, &label)?,
            };
            emit(&[report], out.as_deref())
        }
        Command::Ablate { data, backend, config, templates, seed, out } => {
            let base_config = config.resolve()?;
            let training = load_data(&data)?;
            let templates = load_templates(templates.as_deref())?;
            let backend = backend::build(&backend, &data)?;
            let eval = EvalConfig { seed, ..Default::default() };
            let mut reports = Vec::new();
            for ablation in [
                srlf_core::training::Ablation::Full,
                srlf_core::training::Ablation::NoSetwise,
                srlf_core::training::Ablation::NoReflection,
            ] {
                let mut experiment = base_config;
                experiment.training.ablation = ablation;
                let dir = out.join(ablation.name());
                train(&training, experiment, backend.as_ref(), &templates, Some(dir.clone()), &out, false, None)?;
                let state = TrainingState::load(&dir.join(STATE_FILE))?;
                let report =
                    eval_agent(&training, &experiment, &state, &templates, backend.as_ref(), &eval, ablation.name())?;
                write_json(&dir.join(REPORT_FILE), &report)?;
                reports.push(report);
            }
            for method in [Method::Bm25, Method::Random] {
                let label = format!("{method:?}").to_lowercase();
                reports.push(eval_baseline(&training, &base_config, method, &eval, &label)?);
            }
            emit(&reports, Some(&out.join(REPORT_FILE)))
        }
        Command::Report { reports, out } => {
            let mut merged = Vec::new();
            for path in &reports {
                if !path.is_file() {
                    return Err(usage(anyhow!("no report at {}", path.display())));
                }
                let value: serde_json::Value = read_json(path)?;
                // A file holds one report or an array of them.
                match value {
                    serde_json::Value::Array(items) => {
                        for item in items {
                            merged.push(serde_json::from_value(item).map_err(|e| data_err(e.into()))?);
                        }
                    }
                    other => merged.push(serde_json::from_value(other).map_err(|e| data_err(e.into()))?),
                }
            }
            emit(&merged, out.as_deref())
        }
        Command::Cache { action } => cache(action),
    }
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    parse: &'a ParseReport,
    users: usize,
    sampled_users: usize,
    excluded_short_histories: usize,
    interactions: usize,
    items: usize,
}

#[allow(clippy::too_many_arguments)]
fn ingest(
    kind: DatasetKind,
    ratings: &Path,
    meta: &Path,
    out: &Path,
    mode: SampleMode,
    count: Option<usize>,
    seed: u64,
    max_malformed: f64,
) -> CliResult<()> {
    for path in [ratings, meta] {
        if !path.is_file() {
            return Err(usage(anyhow!("input file not found: {}", path.display())));
        }
    }
    if !(0.0..=1.0).contains(&max_malformed) {
        return Err(usage(anyhow!("--max-malformed must be in [0, 1]")));
    }
    let options = ParseOptions { max_malformed_fraction: max_malformed };
    let (dataset, report) = match kind {
        DatasetKind::Movielens => parse_movielens(ratings, meta, &options)?,
        DatasetKind::Amazon => parse_amazon(ratings, meta, &options)?,
    };
    let all = histories(&dataset.interactions);
    let dataset = match count {
        Some(count) => {
            let users: BTreeSet<_> = sample_users(&all, &SamplingConfig::new(mode, count, seed))?.into_iter().collect();
            dataset.restrict_to(&users)
        }
        None => dataset,
    };
    dataset.save(out)?;
    let (training, excluded) = write_splits(&dataset, out)?;
    let summary = IngestSummary {
        parse: &report,
        users: all.len(),
        sampled_users: training.splits.len() + excluded,
        excluded_short_histories: excluded,
        interactions: dataset.interactions.len(),
        items: dataset.catalog.len(),
    };
    write_json(&out.join(INGEST_FILE), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| data_err(e.into()))?);
    Ok(())
}

fn write_splits(dataset: &Dataset, out: &Path) -> CliResult<(TrainingData, usize)> {
    let (training, excluded) = TrainingData::from_dataset(dataset);
    data::write_jsonl(&out.join(data::SPLITS_TABLE), training.splits.values())?;
    Ok((training, excluded))
}

/// Catalog plus splits; splits are recomputed when the table is absent.
fn load_data(dir: &Path) -> CliResult<TrainingData> {
    for table in [data::INTERACTIONS_TABLE, data::CATALOG_TABLE] {
        if !dir.join(table).is_file() {
            return Err(usage(anyhow!("no {table} in {}; run ingest or synth-fixture first", dir.display())));
        }
    }
    let dataset = Dataset::load(dir)?;
    let splits_path = dir.join(data::SPLITS_TABLE);
    if splits_path.is_file() {
        let splits: Vec<UserSplit> = data::read_jsonl(&splits_path)?;
        return Ok(TrainingData {
            catalog: dataset.catalog,
            splits: splits.into_iter().map(|s| (s.user.clone(), s)).collect(),
        });
    }
    Ok(TrainingData::from_dataset(&dataset).0)
}

fn load_templates(dir: Option<&Path>) -> CliResult<TemplateSet> {
    match dir {
        None => Ok(TemplateSet::default()),
        Some(dir) if !dir.is_dir() => Err(usage(anyhow!("template directory not found: {}", dir.display()))),
        Some(dir) => TemplateSet::load_dir(dir).map_err(|e| usage(e.into())),
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    training: &TrainingData,
    config: ExperimentConfig,
    backend: &dyn Backend,
    templates: &TemplateSet,
    checkpoint_dir: Option<PathBuf>,
    runs: &Path,
    resume: bool,
    stop_after_users: Option<usize>,
) -> CliResult<PathBuf> {
    let trainer = Trainer::new(training, config, backend, templates)?;
    let hash = trainer.config_hash()?;
    let run_dir = match checkpoint_dir {
        Some(dir) => dir,
        None => {
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            runs.join(format!("{}-{stamp}", &hash[..12]))
        }
    };
    if resume && !run_dir.join(CHECKPOINT_FILE).is_file() {
        return Err(usage(anyhow!("no checkpoint in {}", run_dir.display())));
    }
    std::fs::create_dir_all(&run_dir).with_context(|| format!("cannot create {}", run_dir.display())).map_err(usage)?;
    write_json(&run_dir.join(CONFIG_FILE), &config)?;

    let outcome = trainer.run(&RunOptions { run_dir: Some(run_dir.clone()), resume, stop_after_users })?;
    let log = std::fs::read(run_dir.join(LOG_FILE))
        .with_context(|| format!("cannot read {}", run_dir.join(LOG_FILE).display()))
        .map_err(data_err)?;
    let losses: Vec<String> = outcome.mean_loss_by_epoch().iter().map(|l| format!("{l:.4}")).collect();
    println!("steps: {}", outcome.records.len());
    println!("mean loss by epoch: [{}]", losses.join(", "));
    println!("completed: {}", outcome.completed);
    println!("log digest: {}", sha256_hex(&log));
    Ok(run_dir)
}

fn eval_agent(
    training: &TrainingData,
    config: &ExperimentConfig,
    state: &TrainingState,
    templates: &TemplateSet,
    backend: &dyn Backend,
    eval: &EvalConfig,
    label: &str,
) -> CliResult<MetricsReport> {
    let base = base_descriptions(&training.catalog, &config.init)?;
    let ranker = Ranker::Agent { state, base: &base, mode: config.assessment_mode(), templates, backend };
    Ok(evaluate(training, &ranker, eval, label)?)
}

fn eval_baseline(
    training: &TrainingData,
    config: &ExperimentConfig,
    method: Method,
    eval: &EvalConfig,
    label: &str,
) -> CliResult<MetricsReport> {
    let base = base_descriptions(&training.catalog, &config.init)?;
    let ranker = match method {
        Method::Bm25 => Ranker::Bm25 { base: &base, params: Bm25Params::default() },
        Method::Random => Ranker::Random,
        Method::Perfect => Ranker::Perfect,
        Method::Srlf => unreachable!("agent evaluation goes through eval_agent"),
    };
    Ok(evaluate(training, &ranker, eval, label)?)
}

/// Prints the comparison table and the reference block; writes JSON to `out`.
fn emit(reports: &[MetricsReport], out: Option<&Path>) -> CliResult<()> {
    println!("{}", render_comparison(reports));
    println!("Reference (published, not reproduced):\n{}", render_reference());
    if let Some(path) = out {
        if reports.len() == 1 {
            write_json(path, &reports[0])?;
        } else {
            write_json(path, &reports)?;
        }
    }
    if reports.iter().any(|r| !r.valid) {
        return Err(data_err(anyhow!("too many users failed; report marked invalid")));
    }
    Ok(())
}

fn cache(action: CacheAction) -> CliResult<()> {
    let file = match &action {
        CacheAction::Stats { file } | CacheAction::Verify { file, .. } => file,
    };
    if !file.is_file() {
        return Err(usage(anyhow!("cache file not found: {}", file.display())));
    }
    let entries: Vec<CacheEntry> = data::read_jsonl(file)?;
    match action {
        CacheAction::Stats { .. } => {
            let mut per_template = std::collections::BTreeMap::<&str, usize>::new();
            for e in &entries {
                *per_template.entry(e.request.template_name.as_str()).or_default() += 1;
            }
            let keys: BTreeSet<&str> = entries.iter().map(|e| e.key.as_str()).collect();
            println!("entries: {}", entries.len());
            println!("distinct keys: {}", keys.len());
            for (template, n) in per_template {
                println!("  {template}: {n}");
            }
            Ok(())
        }
        CacheAction::Verify { model, .. } => {
            let bad = entries.iter().filter(|e| cache_key(&e.request, &model) != e.key).count();
            println!("{} entries, {bad} with a key that does not match model {model}", entries.len());
            if bad > 0 {
                return Err(data_err(anyhow!("{bad} cache keys do not match")));
            }
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(usage)?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display())).map_err(data_err)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(data_err)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| data_err(e.into()))?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display())).map_err(data_err)
}
