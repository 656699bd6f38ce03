//! `arbfree` — batch pipeline for arbitrage-free factor market models.
//!
//! Verbs: generate, decode, constraints, train, simulate, vix, secondary,
//! evaluate, sweep. Every command is a pure function of its inputs, the
//! resolved configuration and the seed; re-running reproduces byte-identical
//! outputs. Exit codes: 0 success, 2 configuration error, 3 numerical
//! failure, 4 infeasible geometry.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<arbfree::Error> for CliError {
    fn from(e: arbfree::Error) -> Self {
        use arbfree::Error::*;
        let code = match &e {
            // infeasible geometry or data
            EmptyPolytope
            | Unbounded { .. }
            | RhoStarTooLarge { .. }
            | DegenerateBoundary { .. }
            | EmptyTrainingSet
            | RepairInfeasible
            | OutsidePolytope { .. }
            | StuckAtBoundary { .. } => 4,
            // configuration and interface misuse
            InvalidLattice(_)
            | DimensionMismatch(_)
            | PreconditionViolated(_)
            | IndexOutOfRange { .. }
            | LengthMismatch { .. }
            | ShapeMismatch(_)
            | MissingFit
            | InvalidRhoStar { .. }
            | LeverageNotIdentity => 2,
            // numerical failures
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "arbfree",
    version,
    about = "Arbitrage-free factor market models: data generation, factor decoding, constrained neural-SDE calibration and simulation"
)]
struct Cli {
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory holding inputs and outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the seed of the invoked stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic surface series from the ground-truth model.
    Generate,
    /// Decode factors from the surface series.
    Decode,
    /// Build the static no-arbitrage system and the factor polytope.
    Constraints,
    /// Calibrate the constrained neural SDE.
    Train {
        /// Train without the boundary operators (ablation study).
        #[arg(long)]
        operators_disabled: bool,
    },
    /// Simulate the calibrated model with the tamed Euler scheme.
    Simulate {
        /// Number of steps (overrides the configuration).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compute VIX series (direct and regression modes).
    Vix,
    /// Append secondary factors, fit their models and simulate jointly.
    Secondary,
    /// Emit metrics for the decoded factors, model and simulation.
    Evaluate,
    /// Train and evaluate a grid of network variants.
    Sweep,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => io::read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.simulate.seed = seed;
        cfg.secondary.seed = seed;
        cfg.sweep.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("create {out:?}: {e}")))?;
    match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg, out),
        Command::Decode => commands::cmd_decode(&cfg, out),
        Command::Constraints => commands::cmd_constraints(&cfg, out),
        Command::Train { operators_disabled } => {
            commands::cmd_train(&cfg, out, *operators_disabled)
        }
        Command::Simulate { steps } => commands::cmd_simulate(&cfg, out, *steps),
        Command::Vix => commands::cmd_vix(&cfg, out),
        Command::Secondary => commands::cmd_secondary(&cfg, out),
        Command::Evaluate => commands::cmd_evaluate(&cfg, out),
        Command::Sweep => commands::cmd_sweep(&cfg, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ARBFREE_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
