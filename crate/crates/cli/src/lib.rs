//! Command-line tools and the booking service.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors (bad flags,
//! malformed or inconsistent input files), 1 for everything else.

pub mod commands;
pub mod service;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use paraflex_core::history::DayClass;
use paraflex_core::simulator::Arm;

#[derive(Debug, Parser)]
#[command(name = "paraflex", version, about = "Offline routing and online pickup-window booking for paratransit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an instance heuristically and print the solution document.
    Solve(SolveArgs),
    /// Solve a small instance exactly and print the solution document.
    Oracle(OracleArgs),
    /// Build or synthesize demand data.
    #[command(name = "demand-model", subcommand)]
    DemandModel(DemandCommand),
    /// Train a value network on simulated booking days.
    Train(TrainArgs),
    /// Replay instance files as booking days under each strategy.
    Evaluate(EvaluateArgs),
    /// Compare strategies on sampled booking days.
    Simulate(SimulateArgs),
    /// Run the HTTP booking service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Greedy,
    /// Annealing from one route per trip.
    Sa,
    /// Annealing from the greedy solution.
    #[value(name = "sa+greedy")]
    SaGreedy,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value = "greedy")]
    pub algo: Algo,
    /// Annealing iterations.
    #[arg(long, conflicts_with = "seconds")]
    pub iters: Option<u64>,
    /// Annealing wall time in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub instance: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Refuse instances with more trips than this.
    #[arg(long, default_value_t = paraflex_core::oracle::DEFAULT_LIMIT)]
    pub limit: usize,
    /// Accepted for uniformity; the exact solver is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub instance: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AreaChoice {
    /// Codes from the file when every row has them, else a grid.
    Auto,
    Zip,
    Grid,
}

#[derive(Debug, Subcommand)]
pub enum DemandCommand {
    /// Estimate a demand model from a history CSV.
    Build {
        history: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        areas: AreaChoice,
        /// Grid cell edge in meters.
        #[arg(long, default_value_t = paraflex_core::demand::DEFAULT_CELL_M)]
        cell_m: f64,
        /// Accepted for uniformity; building is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic history CSV.
    Synth {
        #[arg(long, default_value_t = 90)]
        days: usize,
        #[arg(long, default_value_t = 40.0)]
        weekday_mean: f64,
        #[arg(long, default_value_t = 18.0)]
        weekend_mean: f64,
        #[arg(long, default_value = "2024-01-01")]
        first_day: chrono::NaiveDate,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Where the demand model comes from.
#[derive(Debug, Args, Clone)]
pub struct DemandSource {
    /// Demand model file; without it a model is built from synthetic
    /// history drawn with `--seed`.
    #[arg(long)]
    pub demand: Option<PathBuf>,
    /// Days of synthetic history when no demand file is given.
    #[arg(long, default_value_t = 90)]
    pub history_days: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub demand: DemandSource,
    /// Random-action episodes before learning starts.
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.95)]
    pub epsilon_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Multiplier on the anytime iteration budget between calls.
    #[arg(long, default_value_t = 1.0)]
    pub budget_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassChoice {
    Weekday,
    Weekend,
}

impl From<ClassChoice> for DayClass {
    fn from(c: ClassChoice) -> Self {
        match c {
            ClassChoice::Weekday => DayClass::Weekday,
            ClassChoice::Weekend => DayClass::Weekend,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub demand: DemandSource,
    /// Strategies to run; defaults to a,b,c,d with a model and c,d without.
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<Arm>>,
    #[arg(long, value_enum, default_value = "weekday")]
    pub class: ClassChoice,
    #[arg(long, default_value_t = 1.0)]
    pub budget_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(required = true)]
    pub instances: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub days: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Strategies to run; defaults to a,b,c,d with a model and c,d without.
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<Arm>>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub demand: DemandSource,
    /// Restrict sampled days to one class.
    #[arg(long, value_enum)]
    pub class: Option<ClassChoice>,
    #[arg(long, default_value_t = 1.0)]
    pub budget_scale: f64,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub demand: Option<PathBuf>,
    /// Directory with the console bundle, served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Append-only journal; existing entries are replayed at start.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Wall time of each anytime run, seconds.
    #[arg(long, default_value_t = 300.0)]
    pub anytime_seconds: f64,
    /// Base seed of the annealing runs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// An error the caller can fix by changing arguments or input files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Exit code for an error from a command.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    use paraflex_core::Error as E;
    for cause in e.chain() {
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::Parse { .. } | E::Invalid(_) | E::Json(_) | E::TooLarge { .. } => 2,
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
