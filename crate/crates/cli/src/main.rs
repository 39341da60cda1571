use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use informants_core::analysis::{fmt2, score_run, ScoredRun, DEFAULT_OUTLIER_THRESHOLD};
use informants_core::parse::{score_reply, ScoringPolicy, UnparseablePolicy};
use informants_core::prompt::{builtin_strategy, load_strategy, render, PromptStrategy};
use informants_core::provider::mock::{script_from_answer_key, ScriptedBehavior};
use informants_core::provider::openai::OpenAiClient;
use informants_core::provider::{GenerationParams, Provider};
use informants_core::report::{build_report, write_report};
use informants_core::runner::{RunError, RunRecord, Runner};
use informants_core::store::{
    informant_file, load_run, pilot_dir, read_manifest, run_dir, write_manifest, write_scored, DirLock, JsonlSink,
    StoreError,
};
use informants_core::study::{load_study, parse_study, validate_study, Study, StudyError};

/// Run forced-choice linguistic experiments with a language model as informant.
#[derive(Parser)]
#[command(name = "informants", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a study file and list every problem found.
    Validate {
        #[arg(long)]
        study: PathBuf,
    },
    /// Run one informant, printing each prompt, reply and parse.
    Pilot {
        #[command(flatten)]
        run: RunArgs,
        /// Informant to simulate.
        #[arg(long, default_value_t = 0)]
        informant: u32,
    },
    /// Run the full cohort (resuming an interrupted run in place).
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Number of runs, numbered from 1. Defaults to the study's run count.
        #[arg(long, conflicts_with = "run_index")]
        runs: Option<u32>,
        /// Run a single cohort with this index.
        #[arg(long)]
        run_index: Option<u32>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Score run directories and write the report bundle.
    Analyze {
        #[arg(long)]
        study: PathBuf,
        /// Run directories holding manifest.json and informant logs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Bundle directory. Defaults to `report` next to the first run.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Policy::Incorrect)]
        unparseable: Policy,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_THRESHOLD)]
        outlier_threshold: f64,
    },
    /// Analyze every run of one strategy under an output directory and print the summary.
    Report {
        #[arg(long)]
        study: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Incorrect)]
        unparseable: Policy,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_THRESHOLD)]
        outlier_threshold: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    study: PathBuf,
    /// Built-in strategy name or path to a TOML strategy file.
    #[arg(long)]
    strategy: String,
    #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
    provider: ProviderKind,
    /// Scripted behavior (JSON) for the mock provider; the answer key is used when absent.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Policy::Incorrect)]
    unparseable: Policy,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Live,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Incorrect,
    Exclude,
}

impl Policy {
    fn scoring(self) -> ScoringPolicy {
        ScoringPolicy {
            unparseable: match self {
                Policy::Incorrect => UnparseablePolicy::Incorrect,
                Policy::Exclude => UnparseablePolicy::Exclude,
            },
        }
    }
}

enum Failure {
    Config(String),
    Validation(String),
    Provider(String),
    Analysis(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Provider(_) => 4,
            Failure::Analysis(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Validation(m) => write!(f, "validation error: {m}"),
            Failure::Provider(m) => write!(f, "provider error: {m}"),
            Failure::Analysis(m) => write!(f, "analysis error: {m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Locked(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Provider(p) => Failure::Provider(p.to_string()),
            RunError::Study(s) => s.into(),
            RunError::Sink(io) => Failure::Other(io.into()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<informants_core::analysis::AnalysisError> for Failure {
    fn from(e: informants_core::analysis::AnalysisError) -> Self {
        Failure::Analysis(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn resolve_strategy(study: &Study, spec: &str) -> Result<PromptStrategy> {
    let path = Path::new(spec);
    let strategy = if path.is_file() {
        load_strategy(path)
    } else {
        builtin_strategy(study.kind(), spec)
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    strategy.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(strategy)
}

fn params(args: &RunArgs) -> Result<GenerationParams> {
    let mut p = GenerationParams::default();
    if let Some(m) = &args.model {
        p.model_name = m.clone();
    }
    p.temperature = args.temperature;
    p.max_output_tokens = args.max_tokens;
    if let Some(ms) = args.timeout_ms {
        p.timeout = std::time::Duration::from_millis(ms);
    }
    p.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(p)
}

fn provider(args: &RunArgs, study: &Study) -> Result<Box<dyn Provider>> {
    match args.provider {
        ProviderKind::Live => {
            let client = OpenAiClient::from_env().map_err(|e| Failure::Config(e.to_string()))?;
            Ok(Box::new(client))
        }
        ProviderKind::Mock => {
            let plan = match &args.script {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str::<ScriptedBehavior>(&text)
                        .map_err(|e| Failure::Config(format!("malformed script {}: {e}", path.display())))?
                }
                None => ScriptedBehavior::oracle(),
            };
            let mock = script_from_answer_key(study, &plan).map_err(|e| Failure::Config(e.to_string()))?;
            Ok(Box::new(mock))
        }
    }
}

fn cmd_validate(study: &Path) -> Result<()> {
    let parsed = parse_study(study)?;
    let report = validate_study(&parsed);
    if report.is_empty() {
        println!(
            "{}: valid ({} items, {} trial items, {} informants, {} runs)",
            study.display(),
            parsed.items.len(),
            parsed.trial_items().len(),
            parsed.n_informants,
            parsed.n_runs
        );
        Ok(())
    } else {
        print!("{}: {} problem(s)\n{report}", study.display(), report.findings.len());
        Err(Failure::Validation(format!("{} problem(s) found", report.findings.len())))
    }
}

fn cmd_pilot(args: &RunArgs, informant: u32) -> Result<()> {
    let study = load_study(&args.study)?;
    let strategy = resolve_strategy(&study, &args.strategy)?;
    let params = params(args)?;
    let provider = provider(args, &study)?;
    let _lock = DirLock::acquire(&args.out)?;
    let dir = pilot_dir(&args.out, &study.study_id, strategy.name());
    let log = informant_file(&dir, informant);
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let sink = JsonlSink::create(&dir)?;
    let runner = Runner::new(&study, &strategy, provider.as_ref(), &params, args.seed).with_sink(&sink);
    write_manifest(&dir, &runner.start_manifest(0))?;
    let record = runner.run_informant(informant, 0)?;

    let index = study.item_index();
    let policy = args.unparseable.scoring();
    let (mut correct, mut scored) = (0u32, 0u32);
    for (k, trial) in record.trials.iter().enumerate() {
        let item = index[trial.item_id.as_str()];
        let messages = render(&strategy, item).map_err(|e| Failure::Config(e.to_string()))?;
        println!("=== trial {} / {}: {}", k + 1, record.trials.len(), item.item_id);
        for m in &messages.messages {
            println!("[{:?}] {}", m.role, m.content);
        }
        let outcome = score_reply(trial.raw_reply.text(), item, policy, informant, 0);
        match trial.raw_reply.text() {
            Some(text) => println!("[reply] {text}"),
            None => println!("[reply] (none: {:?})", trial.raw_reply),
        }
        println!(
            "[parsed] {}",
            outcome
                .parsed
                .as_ref()
                .map(|p| serde_json::to_string(p).unwrap_or_default())
                .unwrap_or_else(|| "-".into())
        );
        println!("[score] {:?}", outcome.score);
        if item.is_scored() {
            match outcome.score {
                informants_core::parse::Score::Correct => {
                    correct += 1;
                    scored += 1
                }
                informants_core::parse::Score::Incorrect => scored += 1,
                _ => {}
            }
        }
    }
    let mut manifest = read_manifest(&dir)?;
    manifest.partial = false;
    manifest.finished_at_ms = Some(informants_core::runner::now_ms());
    write_manifest(&dir, &manifest)?;
    println!(
        "pilot: informant {informant}, {} trials, {correct}/{scored} scored trials correct; transcript in {}",
        record.trials.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs, runs: Option<u32>, run_index: Option<u32>, parallelism: usize) -> Result<()> {
    let study = load_study(&args.study)?;
    let strategy = resolve_strategy(&study, &args.strategy)?;
    let params = params(args)?;
    let provider = provider(args, &study)?;
    if parallelism == 0 {
        return Err(Failure::Config("--parallelism must be at least 1".into()));
    }
    let indices: Vec<u32> = match (run_index, runs) {
        (Some(i), _) => vec![i],
        (None, Some(n)) => (1..=n).collect(),
        (None, None) => (1..=study.n_runs).collect(),
    };
    let _lock = DirLock::acquire(&args.out)?;
    for idx in indices {
        let dir = run_dir(&args.out, &study.study_id, strategy.name(), idx);
        let record = run_one(&study, &strategy, provider.as_ref(), &params, args.seed, idx, parallelism, &dir)?;
        write_manifest(&dir, &record.manifest)?;
        println!(
            "run {idx}: {} informants, {} trials, {} unanswered -> {}",
            record.informants.len(),
            record.trial_count(),
            record.informants.iter().map(|i| i.unanswered()).sum::<usize>(),
            dir.display()
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    study: &Study,
    strategy: &PromptStrategy,
    provider: &dyn Provider,
    params: &GenerationParams,
    seed: u64,
    run_index: u32,
    parallelism: usize,
    dir: &Path,
) -> Result<RunRecord> {
    let sink = JsonlSink::create(dir)?;
    let runner = Runner::new(study, strategy, provider, params, seed).with_sink(&sink);
    match load_run(dir) {
        Ok(existing) => {
            if !existing.is_partial() {
                check_same(&existing, study, strategy, seed)?;
                println!("run {run_index}: already complete, nothing to do");
                return Ok(existing);
            }
            println!(
                "run {run_index}: resuming ({} trials already recorded)",
                existing.trial_count()
            );
            Ok(runner.resume(existing, parallelism)?)
        }
        Err(StoreError::MissingManifest(_)) => {
            write_manifest(dir, &runner.start_manifest(run_index))?;
            Ok(runner.run_cohort(run_index, parallelism)?)
        }
        Err(e) => Err(e.into()),
    }
}

fn check_same(run: &RunRecord, study: &Study, strategy: &PromptStrategy, seed: u64) -> Result<()> {
    let m = &run.manifest;
    if m.study_id != study.study_id || m.strategy_id != strategy.name() || m.master_seed != seed {
        return Err(Failure::Config(format!(
            "existing run (study `{}`, strategy `{}`, seed {}) does not match this configuration",
            m.study_id, m.strategy_id, m.master_seed
        )));
    }
    Ok(())
}

fn analyze_dirs(
    study: &Study,
    dirs: &[PathBuf],
    out: &Path,
    policy: ScoringPolicy,
    threshold: f64,
) -> Result<informants_core::report::Report> {
    let mut records = Vec::new();
    let mut scored: Vec<ScoredRun> = Vec::new();
    for dir in dirs {
        let record = load_run(dir)?;
        if let Some(first) = records.first() {
            let first: &RunRecord = first;
            if first.study_id() != record.study_id() {
                return Err(Failure::Analysis(format!(
                    "runs belong to different studies: `{}` and `{}`",
                    first.study_id(),
                    record.study_id()
                )));
            }
            if first.strategy_id() != record.strategy_id() {
                return Err(Failure::Analysis(format!(
                    "runs used different strategies: `{}` and `{}`",
                    first.strategy_id(),
                    record.strategy_id()
                )));
            }
        }
        let s = score_run(&record, study, policy)?;
        write_scored(dir, &s.trials)?;
        scored.push(s);
        records.push(record);
    }
    let report = build_report(study, &scored, &records, threshold)?;
    write_report(&report, out)?;
    Ok(report)
}

fn print_summary(report: &informants_core::report::Report, out: &Path) {
    println!("{} / {}", report.study_id, report.strategy_id);
    for a in &report.aggregates {
        let per_run: Vec<String> = a.per_run_values.iter().map(|v| fmt2(*v)).collect();
        println!(
            "  {:<24} runs [{}]  mean {}  ({:.4}; pooled {:.4})",
            a.scope,
            per_run.join(", "),
            fmt2(a.mean_value),
            a.mean_value,
            a.pooled_value
        );
    }
    for c in &report.comparisons {
        println!(
            "  baseline {:<24} human {}  model {:.4}  delta {:+.4}",
            c.scope,
            fmt2(c.human_mean),
            c.model_mean,
            c.delta
        );
    }
    for f in &report.outliers.flagged_words {
        println!(
            "  outlier `{}`: {} of {} critical errors",
            f.word, f.errors, report.outliers.total_errors
        );
    }
    println!("report bundle: {}", out.display());
}

fn cmd_analyze(study: &Path, runs: &[PathBuf], out: Option<PathBuf>, policy: Policy, threshold: f64) -> Result<()> {
    let study = load_study(study)?;
    let out = out.unwrap_or_else(|| {
        runs[0]
            .parent()
            .map(|p| p.join("report"))
            .unwrap_or_else(|| PathBuf::from("report"))
    });
    let report = analyze_dirs(&study, runs, &out, policy.scoring(), threshold)?;
    print_summary(&report, &out);
    Ok(())
}

fn cmd_report(study: &Path, strategy: &str, out: &Path, policy: Policy, threshold: f64) -> Result<()> {
    let study = load_study(study)?;
    let strategy = resolve_strategy(&study, strategy)?;
    let base = out.join(&study.study_id).join(strategy.name());
    let mut dirs: Vec<(u32, PathBuf)> = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&base) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(i) = name.strip_prefix("run").and_then(|s| s.parse::<u32>().ok()) {
                dirs.push((i, entry.path()));
            }
        }
    }
    if dirs.is_empty() {
        return Err(Failure::Analysis(format!("no runs under {}", base.display())));
    }
    dirs.sort();
    let dirs: Vec<PathBuf> = dirs.into_iter().map(|(_, d)| d).collect();
    let _lock = DirLock::acquire(out)?;
    let bundle = base.join("report");
    let report = analyze_dirs(&study, &dirs, &bundle, policy.scoring(), threshold)?;
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}\nreport bundle: {}\n", report.to_markdown(), bundle.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { study } => cmd_validate(&study),
        Command::Pilot { run, informant } => cmd_pilot(&run, informant),
        Command::Run {
            run,
            runs,
            run_index,
            parallelism,
        } => cmd_run(&run, runs, run_index, parallelism),
        Command::Analyze {
            study,
            runs,
            out,
            unparseable,
            outlier_threshold,
        } => cmd_analyze(&study, &runs, out, unparseable, outlier_threshold),
        Command::Report {
            study,
            strategy,
            out,
            unparseable,
            outlier_threshold,
        } => cmd_report(&study, &strategy, &out, unparseable, outlier_threshold),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
