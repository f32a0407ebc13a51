//! `doat`: dataset generation, experiment runs and sweeps over the
//! overlay simulator.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or input
//! error, 3 non-quiescent run, 4 internal invariant breach.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use doat::config::{load_config_file, ConfigError, RunConfig};
use doat::delay_space::{generate_uniform, save_coordinates, BoundingBox};
use doat::experiments::{
    run_scenario, run_sweep, write_results, write_results_to_path, RunError, RunMetrics,
};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NON_QUIESCENT: u8 = 3;
const EXIT_INVARIANT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "doat",
    version,
    about = "Delay-aware anycast overlay simulator and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a uniform coordinate dataset file.
    Generate {
        /// Number of hosts.
        #[arg(long)]
        n: usize,
        /// Lower bound of every axis.
        #[arg(long, default_value_t = -100.0, allow_hyphen_values = true)]
        min: f64,
        /// Upper bound of every axis.
        #[arg(long, default_value_t = 100.0, allow_hyphen_values = true)]
        max: f64,
        /// Delay-space dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the experiment a config file describes.
    Run {
        /// Configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Results path; overrides the config's [output] section and
        /// falls back to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the run seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the message trace to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the cross-product of the config's [sweep] axes and seeds.
    Sweep {
        /// Configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Aggregated results path; overrides the config's [output]
        /// section and falls back to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; the output is identical for any value.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

enum CliError {
    Usage(String),
    Config(String),
    NonQuiescent(String),
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::NonQuiescent(_) => EXIT_NON_QUIESCENT,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Config(m)
            | CliError::NonQuiescent(m)
            | CliError::Invariant(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match &e {
            RunError::Sim(doat::sim::SimError::Invariant(_))
            | RunError::Sim(doat::sim::SimError::Fault(_)) => CliError::Invariant(e.to_string()),
            RunError::BuildStalled => CliError::NonQuiescent(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_err(e: std::io::Error, what: &str) -> CliError {
    CliError::Config(format!("{what}: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems (including --help/--version output) leave
            // through the usage code unless clap says otherwise.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("doat: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            n,
            min,
            max,
            dim,
            seed,
            out,
        } => generate(n, min, max, dim, seed, &out),
        Command::Run {
            config,
            out,
            seed,
            trace,
        } => run(&config, out, seed, trace),
        Command::Sweep { config, out, jobs } => sweep(&config, out, jobs),
    }
}

fn generate(
    n: usize,
    min: f64,
    max: f64,
    dim: usize,
    seed: u64,
    out: &PathBuf,
) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let bounds = BoundingBox::square(min, max, dim)
        .map_err(|e| CliError::Usage(format!("invalid bounds: {e}")))?;
    let points =
        generate_uniform(n, &bounds, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    save_coordinates(&points, out).map_err(|e| io_err(e, "writing dataset"))?;
    eprintln!("doat: wrote {} hosts to {}", points.len(), out.display());
    Ok(())
}

fn emit(metrics: &[RunMetrics], out: Option<&PathBuf>) -> Result<(), CliError> {
    let refs: Vec<&RunMetrics> = metrics.iter().collect();
    match out {
        Some(path) => {
            write_results_to_path(&refs, path).map_err(|e| io_err(e, "writing results"))?;
            eprintln!(
                "doat: wrote {} rows to {}",
                metrics.iter().map(|m| m.rows.len()).sum::<usize>(),
                path.display()
            );
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_results(&refs, &mut lock).map_err(|e| io_err(e, "writing results"))?;
            lock.flush().map_err(|e| io_err(e, "writing results"))?;
        }
    }
    Ok(())
}

fn quiescence_gate(metrics: &[RunMetrics]) -> Result<(), CliError> {
    let stalled: Vec<&str> = metrics
        .iter()
        .filter(|m| !m.quiescent)
        .map(|m| m.scenario_id.as_str())
        .collect();
    if stalled.is_empty() {
        Ok(())
    } else {
        Err(CliError::NonQuiescent(format!(
            "run(s) did not quiesce: {}",
            stalled.join(", ")
        )))
    }
}

fn run(
    config: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    trace: Option<PathBuf>,
) -> Result<(), CliError> {
    let RunConfig {
        mut scenario,
        out: config_out,
        ..
    } = load_config_file(config)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    scenario.trace = trace.is_some();
    let mut metrics = run_scenario(&scenario)?;
    if let (Some(path), Some(bytes)) = (&trace, metrics.trace.take()) {
        std::fs::write(path, bytes).map_err(|e| io_err(e, "writing trace"))?;
    }
    let out = out.or(config_out);
    emit(std::slice::from_ref(&metrics), out.as_ref())?;
    quiescence_gate(std::slice::from_ref(&metrics))
}

fn sweep(config: &PathBuf, out: Option<PathBuf>, jobs: usize) -> Result<(), CliError> {
    let cfg = load_config_file(config)?;
    let spec = cfg.sweep_spec()?;
    let metrics = run_sweep(&spec, jobs)?;
    let out = out.or(cfg.out);
    emit(&metrics, out.as_ref())?;
    quiescence_gate(&metrics)
}
