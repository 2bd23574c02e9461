use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tagsentry::coarse::run_coarse;
use tagsentry::emulator::{export_location_stats, generate};
use tagsentry::ingest::{load_dataset, save_dataset, write_json, GroundTruth};
use tagsentry::metrics::build_report;
use tagsentry::misplacement::rank_misplaced;
use tagsentry::pipeline::{self, RunConfig};
use tagsentry::removal::rank_removed;
use tagsentry::truthdiscovery::ValidityLabels;
use tagsentry::{Error, SuspectRanking};

const EXIT_FAILURE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_USAGE: u8 = 64;
const THREADS_ENV: &str = "TAGSENTRY_THREADS";

/// Detect forged, misplaced and removed location tags in indoor crowdsensing data.
#[derive(Debug, Parser)]
#[command(name = "tagsentry", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Emulate(EmulateArgs),
    /// Label every record truthful (1) or falsified (0).
    Detect(DetectArgs),
    /// Rank tags by abnormal-trajectory count.
    Misplaced(RankArgs),
    /// Rank tags by visit frequency relative to their neighbors.
    Removed(RankArgs),
    /// Score labels and rankings against ground truth.
    Evaluate(EvaluateArgs),
    /// Emulate, detect, rank and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct EmulateArgs {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    records_target: Option<usize>,
    #[arg(long)]
    n_tags: Option<usize>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_attackers: Option<usize>,
    #[arg(long)]
    n_misplaced: Option<usize>,
    #[arg(long)]
    n_removed: Option<usize>,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    topology: PathBuf,
    /// JSON config; only detection keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Stop after the SSID and speed checks.
    #[arg(long)]
    coarse_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Emit only the first k tags.
    #[arg(long)]
    top: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Misplaced ranking, for top-k recall.
    #[arg(long)]
    misplaced: Option<PathBuf>,
    /// Removed ranking, for top-k recall.
    #[arg(long)]
    removed: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> tagsentry::Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::from_path)
}

fn read_json(path: &Path) -> tagsentry::Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_ranking(path: &Path) -> tagsentry::Result<SuspectRanking> {
    SuspectRanking::from_json(&read_json(path)?)
        .ok_or_else(|| Error::Validation(format!("{}: not a ranking file", path.display())))
}

fn emulate(args: EmulateArgs) -> tagsentry::Result<()> {
    let mut config = load_config(args.config.as_deref())?.emulator;
    let overrides = [
        (args.records_target, &mut config.records_target),
        (args.n_tags, &mut config.n_tags),
        (args.n_users, &mut config.n_users),
        (args.n_attackers, &mut config.n_attackers),
        (args.n_misplaced, &mut config.n_misplaced),
        (args.n_removed, &mut config.n_removed),
    ];
    for (value, slot) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (dataset, truth) = generate(&config)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    save_dataset(
        &dataset,
        args.out.join(pipeline::RECORDS_FILE),
        args.out.join(pipeline::TOPOLOGY_FILE),
    )?;
    write_json(args.out.join(pipeline::TRUTH_FILE), &truth)?;
    let stats = export_location_stats(&dataset, &Default::default())?;
    write_json(args.out.join(pipeline::STATS_FILE), &stats)?;
    info!("wrote {} records to {}", dataset.len(), args.out.display());
    Ok(())
}

fn detect(args: DetectArgs) -> tagsentry::Result<()> {
    let config = load_config(args.input.config.as_deref())?.detection;
    config.validate()?;
    let dataset = load_dataset(&args.input.records, &args.input.topology)?;
    let body = if args.coarse_only {
        let flags = run_coarse(&dataset, &config)?;
        let labels = ValidityLabels::from_coarse(&dataset, &flags);
        serde_json::json!({ "labels": labels.to_json(), "flagged": flags.to_json()["flagged"] })
    } else {
        pipeline::labels_json(&pipeline::detect(&dataset, &config)?)
    };
    write_json(&args.out, &body)
}

fn rank(args: RankArgs, misplaced: bool) -> tagsentry::Result<()> {
    let config = load_config(args.input.config.as_deref())?.detection;
    config.validate()?;
    let dataset = load_dataset(&args.input.records, &args.input.topology)?;
    let ranking = if misplaced {
        rank_misplaced(&dataset, &config)?
    } else {
        rank_removed(&dataset, &config)?
    };
    let body = ranking.to_json(args.top);
    match args.out {
        Some(path) => write_json(path, &body),
        None => {
            println!("{}", serde_json::to_string_pretty(&body)?);
            Ok(())
        }
    }
}

fn evaluate(args: EvaluateArgs) -> tagsentry::Result<()> {
    let labels = ValidityLabels::from_json(&read_json(&args.labels)?)?;
    let truth = GroundTruth::read(&args.truth)?;
    let misplaced = args.misplaced.as_deref().map(read_ranking).transpose()?;
    let removed = args.removed.as_deref().map(read_ranking).transpose()?;
    let report = build_report(&labels, &truth, misplaced.as_ref(), removed.as_ref())?;
    write_json(&args.out, &report)
}

fn run_pipeline(args: PipelineArgs) -> tagsentry::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let out = pipeline::run(&config, &args.out)?;
    info!(
        "accuracy {:?}, precision {:?}, recall {:?}",
        out.report.accuracy, out.report.precision, out.report.recall
    );
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_FAILURE);
    }
    let result = match cli.command {
        Command::Emulate(a) => emulate(a),
        Command::Detect(a) => detect(a),
        Command::Misplaced(a) => rank(a, true),
        Command::Removed(a) => rank(a, false),
        Command::Evaluate(a) => evaluate(a),
        Command::Pipeline(a) => run_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_FAILURE
            })
        }
    }
}
