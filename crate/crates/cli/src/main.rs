//! `parsmooth` command-line tool: simulation, iterated smoothing, runtime
//! benchmarks, divergence sweeps and maximum-likelihood estimation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O error.

mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{read_config_file, CommandKind, OutputOptions, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(parsmooth::Error),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<parsmooth::Error> for CliError {
    fn from(e: parsmooth::Error) -> Self {
        match e.root() {
            parsmooth::Error::InvalidArgument(_) | parsmooth::Error::Dimension(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e),
        }
    }
}

#[derive(Parser)]
#[command(name = "parsmooth", version, about = "Parallel iterated Kalman smoothing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate states and observations to CSV.
    Simulate(Flags),
    /// Run the iterated smoother on a measurement file.
    Smooth(Flags),
    /// Time smoother variants over a sweep of sequence lengths.
    Bench(Flags),
    /// Count divergent runs over seeds for each variant and length.
    Robustness(Flags),
    /// Maximum-likelihood estimation of model parameters.
    Estimate(Flags),
}

#[derive(Args, Debug, Clone, Default)]
struct Flags {
    /// Flat key=value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, repeatable (e.g. --set ricker.a=30).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// ricker, ct or lgssm.
    #[arg(long)]
    model: Option<String>,
    /// Number of steps (comma-separated sweep for bench/robustness).
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// std or sqrt (comma-separated list for bench/robustness).
    #[arg(long)]
    mode: Option<String>,
    /// seq or par (comma-separated list for bench/robustness).
    #[arg(long)]
    exec: Option<String>,
    /// taylor, cubature, unscented or gh:<order>.
    #[arg(long)]
    linearizer: Option<String>,
    /// Maximum number of smoother iterations.
    #[arg(long)]
    iters: Option<String>,
    /// Stop when the largest mean change falls below this value.
    #[arg(long)]
    tol: Option<String>,
    /// Anderson mixing depth (0 = plain fixed-point iteration).
    #[arg(long)]
    anderson: Option<String>,
    /// 32 or 64.
    #[arg(long)]
    precision: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<String>,
    /// Repetitions (bench) or seeds (robustness).
    #[arg(long)]
    reps: Option<String>,
    /// Untimed warm-up runs per bench variant.
    #[arg(long)]
    warmup: Option<String>,
    /// Scan block size below which work is sequential.
    #[arg(long)]
    threshold: Option<String>,
    /// Measurement CSV with columns y0, y1, ...
    #[arg(long)]
    data: Option<String>,
    /// Score used by estimate: fixed-point or fd.
    #[arg(long)]
    gradient: Option<String>,
    /// Starting parameter for estimate (comma-separated).
    #[arg(long)]
    theta0: Option<String>,
    /// Output CSV (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Secondary CSV: smoother diagnostics or optimizer trace.
    #[arg(long)]
    side_output: Option<PathBuf>,
    /// Also write a JSON record of the configuration next to --out.
    #[arg(long)]
    json: bool,
}

impl Flags {
    fn settings(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut map = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        map.extend(config::parse_pairs(
            self.set.iter().enumerate().map(|(i, s)| (i + 1, s.clone())),
        )?);
        let flags = [
            ("model", &self.model),
            ("n", &self.n),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("exec", &self.exec),
            ("linearizer", &self.linearizer),
            ("iters", &self.iters),
            ("tol", &self.tol),
            ("anderson", &self.anderson),
            ("precision", &self.precision),
            ("threads", &self.threads),
            ("reps", &self.reps),
            ("warmup", &self.warmup),
            ("threshold", &self.threshold),
            ("data", &self.data),
            ("gradient", &self.gradient),
            ("theta0", &self.theta0),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                map.insert(key.to_string(), v.clone());
            }
        }
        Ok(map)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (kind, flags) = match cli.command {
        Command::Simulate(f) => (CommandKind::Simulate, f),
        Command::Smooth(f) => (CommandKind::Smooth, f),
        Command::Bench(f) => (CommandKind::Bench, f),
        Command::Robustness(f) => (CommandKind::Robustness, f),
        Command::Estimate(f) => (CommandKind::Estimate, f),
    };
    let output = OutputOptions {
        out: flags.out.clone(),
        json: flags.json,
        side_output: flags.side_output.clone(),
    };
    let cfg = RunConfig::resolve(kind, &flags.settings()?, output)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    match kind {
        CommandKind::Simulate => commands::simulate_cmd(&cfg),
        CommandKind::Smooth => commands::smooth_cmd(&cfg),
        CommandKind::Bench => commands::bench_cmd(&cfg),
        CommandKind::Robustness => commands::robustness_cmd(&cfg),
        CommandKind::Estimate => commands::estimate_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parsmooth: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
