use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mmpareto::data::Split;
use mmpareto::experiment::{self, ExperimentConfig, StatsOptions};
use mmpareto::pareto::solve_closed_form;
use mmpareto::{Error, RealVec, Strategy, StrategyConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Gradient integration experiments for multimodal learning.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort.
#[derive(Parser, Debug)]
#[command(name = "mmpareto", version)]
struct Cli {
    /// Seed for data and training (train) or for sampling (stats, landscape).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for all outputs; overrides the config's output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Directory where generated datasets are cached and reused.
    #[arg(long, global = true, value_name = "DIR")]
    dataset_cache: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the two-gradient min-norm problem and integrate the pair.
    Solve(SolveArgs),
    /// Train on the synthetic task; writes run.csv, summary.json and checkpoint.json.
    Train(TrainArgs),
    /// Gradient magnitude and covariance statistics of a checkpoint.
    Stats(StatsArgs),
    /// One-dimensional loss landscape scan around a checkpoint.
    Landscape(LandscapeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Uniform,
    Pareto,
    Mmpareto,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Uniform => Strategy::UniformSum,
            StrategyArg::Pareto => Strategy::ConventionalPareto,
            StrategyArg::Mmpareto => Strategy::MMPareto,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Multimodal-loss gradient, comma separated (e.g. 1,0).
    #[arg(long, allow_hyphen_values = true, required_unless_present = "gm_file", conflicts_with = "gm_file")]
    gm: Option<String>,
    /// Unimodal-loss gradient, comma separated (e.g. -1,2).
    #[arg(long, allow_hyphen_values = true, required_unless_present = "gu_file", conflicts_with = "gu_file")]
    gu: Option<String>,
    /// File holding the multimodal gradient (JSON array or comma/whitespace separated).
    #[arg(long, value_name = "PATH")]
    gm_file: Option<PathBuf>,
    /// File holding the unimodal gradient.
    #[arg(long, value_name = "PATH")]
    gu_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mmpareto")]
    strategy: StrategyArg,
    /// Magnitude boost for mmpareto (must be >= 1).
    #[arg(long, default_value_t = mmpareto::integrate::DEFAULT_GAMMA)]
    gamma: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment config (JSON with schema_version); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Strategy to train with; overrides the config.
    #[arg(long, value_enum, conflicts_with = "compare")]
    strategy: Option<StrategyArg>,
    /// Number of seeds, run as seed, seed + 1, ...
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Train several strategies on shared data and initialization, e.g. uniform,pareto,mmpareto.
    #[arg(long, value_enum, value_delimiter = ',')]
    compare: Option<Vec<StrategyArg>>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct CheckpointArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Dataset spec JSON; defaults to dataset.json next to the checkpoint.
    #[arg(long, value_name = "PATH")]
    dataset_spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    /// Number of mini-batches to sample.
    #[arg(long, default_value_t = 200)]
    n_batches: usize,
    #[arg(long, default_value_t = 64, conflicts_with = "full_batch")]
    batch_size: usize,
    /// Use the whole split, in a fixed order, as every batch.
    #[arg(long)]
    full_batch: bool,
    /// Histogram bins for the per-batch gradient magnitudes.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    #[command(flatten)]
    source: CheckpointArgs,
    /// Number of offsets (odd, >= 3).
    #[arg(long, default_value_t = 21)]
    n_points: usize,
    /// Largest offset along the direction.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::NumericalAbort { .. } | Error::RadiusTooLarge { .. } | Error::DegenerateSum => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn parse_vector(text: &str) -> Result<RealVec, Failure> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        let v: Vec<f64> = serde_json::from_str(trimmed).map_err(|e| usage(format!("invalid vector: {e}")))?;
        return Ok(RealVec::new(v));
    }
    trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("invalid number {s:?} in vector"))))
        .collect()
}

fn read_vector(inline: Option<&str>, file: Option<&Path>) -> Result<RealVec, Failure> {
    let v = match (inline, file) {
        (Some(s), _) => parse_vector(s)?,
        (None, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            parse_vector(&text)?
        }
        (None, None) => return Err(usage("missing vector")),
    };
    if v.is_empty() {
        return Err(usage("empty vector"));
    }
    if !v.is_finite() {
        return Err(usage("vector entries must be finite"));
    }
    Ok(v)
}

fn solve_report(args: &SolveArgs) -> Result<serde_json::Value, Failure> {
    let gm = read_vector(args.gm.as_deref(), args.gm_file.as_deref())?;
    let gu = read_vector(args.gu.as_deref(), args.gu_file.as_deref())?;
    if gm.len() != gu.len() {
        return Err(usage(format!("dimension mismatch: --gm has {} entries, --gu has {}", gm.len(), gu.len())));
    }
    let cfg = StrategyConfig::new(args.strategy.into(), args.gamma);
    cfg.validate()?;
    let sol = solve_closed_form(&gm, &gu)?;
    let out = cfg.integrate(&gm, &gu)?;
    Ok(json!({
        "strategy": cfg.strategy.as_str(),
        "gamma": cfg.gamma,
        "alpha_m": out.alpha_m,
        "alpha_u": out.alpha_u,
        "min_norm": sol.min_norm,
        "cos_beta": out.cos_beta,
        "case": out.case_tag.as_str(),
        "final_grad": out.final_grad,
        "lambda": out.lambda,
    }))
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let report = solve_report(args)?;
    // a closed pipe (e.g. `| head`) is not an error for a report
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let strategies: Vec<Strategy> = match (&args.compare, args.strategy) {
        (Some(list), _) => list.iter().map(|&s| s.into()).collect(),
        (None, Some(s)) => vec![s.into()],
        (None, None) => vec![cfg.train.strategy.strategy],
    };
    let report = experiment::run_training(&cfg, &strategies, args.seeds, cli.dataset_cache.as_deref()).map_err(|e| {
        let mut f = Failure::from(e);
        if f.code == EXIT_NUMERICAL {
            f.message = format!(
                "{}\ndiagnostics written to {}",
                f.message,
                experiment::diagnostics_path(&cfg.output_dir).display()
            );
        }
        f
    })?;
    for s in &report.strategies {
        let acc = &s.summary.metrics["test_acc_multimodal"];
        println!(
            "{}: test_acc_multimodal mean {:.4} std {:.4} over {} seed(s)",
            s.summary.strategy, acc.mean, acc.std, s.summary.n_seeds
        );
    }
    println!("summary: {}", cfg.output_dir.join("summary.json").display());
    Ok(())
}

fn output_dir_for(cli: &Cli, checkpoint: &Path) -> PathBuf {
    cli.output_dir.clone().unwrap_or_else(|| {
        checkpoint
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

fn cmd_stats(cli: &Cli, args: &StatsArgs) -> Result<(), Failure> {
    let run = experiment::load_run(
        &args.source.checkpoint,
        args.source.dataset_spec.as_deref(),
        cli.dataset_cache.as_deref(),
    )?;
    let opts = StatsOptions {
        n_batches: args.n_batches,
        batch_size: (!args.full_batch).then_some(args.batch_size),
        bins: args.bins,
        split: args.source.split.into(),
        seed: cli.seed.unwrap_or(0),
    };
    let report = experiment::gradient_report(&run.model, run.data.split(opts.split), &opts)?;
    let dir = output_dir_for(cli, &args.source.checkpoint);
    experiment::write_stats(&dir, &report)?;
    for e in &report.encoders {
        let k_hat = e.ratio.map_or_else(|| "undefined".to_string(), |r| format!("{:.4}", r.k_hat));
        println!(
            "encoder {}: magnitude m {:.6} u {:.6}  cov_trace m {:.6e} u {:.6e}  k_hat {k_hat}",
            e.encoder, e.multimodal.mean_magnitude, e.unimodal.mean_magnitude, e.multimodal.cov_trace, e.unimodal.cov_trace
        );
    }
    println!("stats: {}", dir.join("grad_stats.csv").display());
    Ok(())
}

fn cmd_landscape(cli: &Cli, args: &LandscapeArgs) -> Result<(), Failure> {
    let run = experiment::load_run(
        &args.source.checkpoint,
        args.source.dataset_spec.as_deref(),
        cli.dataset_cache.as_deref(),
    )?;
    let dir = output_dir_for(cli, &args.source.checkpoint);
    let split: Split = args.source.split.into();
    let scan = experiment::run_landscape(
        &run.model,
        run.data.split(split),
        args.n_points,
        args.radius,
        cli.seed.unwrap_or(0),
        &dir,
    )?;
    println!("sharpness_proxy {}", scan.sharpness_proxy);
    println!("landscape: {}", dir.join("landscape.csv").display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Stats(a) => cmd_stats(cli, a),
        Command::Landscape(a) => cmd_landscape(cli, a),
    }
}

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests;
