//! `ttrl`: test-time adaptation runs, adapted inference, distribution file
//! tools, ablation sweeps, and synthetic environment generation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 backend error, 4 data
//! format error.

mod commands;
mod config;
mod samples;

use clap::{Parser, Subcommand};
use commands::ablate::Ablation;
use config::{BackendKind, Baseline, RunConfig};
use std::path::PathBuf;
use ttrl_core::backend::BackendError;
use ttrl_core::distops::DistOpsError;
use ttrl_core::orchestrate::OrchestratorError;
use ttrl_core::sim::SimError;

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: bad configuration or usage.
    Config(String),
    /// Exit 3: backend unreachable or failing.
    Backend(String),
    /// Exit 4: malformed data files.
    Data(String),
    /// Exit 1: filesystem and other unexpected failures.
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Data(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
            CliError::Data(m) => write!(f, "data format error: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(error: BackendError) -> Self {
        match error {
            // A missing endpoint variable is a configuration problem, caught
            // before anything is written.
            BackendError::MissingEnv(var) => {
                CliError::Config(format!("missing environment variable {var}"))
            }
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<DistOpsError> for CliError {
    fn from(error: DistOpsError) -> Self {
        match error {
            DistOpsError::Parse { .. } | DistOpsError::Schema(_) => {
                CliError::Data(error.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(error: SimError) -> Self {
        match error {
            SimError::Parse(_) => CliError::Data(error.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(error: OrchestratorError) -> Self {
        match error {
            OrchestratorError::TotalBackendFailure { .. } => CliError::Backend(error.to_string()),
            OrchestratorError::PriorGridMismatch { .. } => CliError::Data(error.to_string()),
            OrchestratorError::LogParse(_) => CliError::Data(error.to_string()),
            OrchestratorError::LogWrite(_) => CliError::Io(error.to_string()),
            OrchestratorError::DistOps(inner) => CliError::from(inner),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ttrl",
    about = "Test-time adaptation for video QA: frequency rewards, bandit frame selection, and a verifiable simulator"
)]
struct Cli {
    /// Override the run seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory from the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the backend (sim | remote).
    #[arg(long, global = true)]
    backend: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the adaptation loop and write distributions, the global prior,
    /// the rollout log, and (in toy mode) the policy checkpoint.
    Adapt {
        #[arg(long)]
        config: PathBuf,
    },
    /// Adapted inference over an evaluation set with a frame prior.
    Infer {
        #[arg(long)]
        config: PathBuf,
        /// Learned prior file (fdist-v1); required for the learned baseline.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Toy policy checkpoint to answer with instead of the sim oracle.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// learned | random | clip | self-consistency
        #[arg(long)]
        baseline: Option<String>,
        /// Votes for self-consistency aggregation.
        #[arg(long)]
        votes: Option<usize>,
        /// Frames shown to the backend at inference.
        #[arg(long)]
        frames: Option<usize>,
        /// Interpolate a mismatched prior onto the sample grid.
        #[arg(long)]
        interpolate: bool,
    },
    /// Distribution file tools.
    Dist {
        #[command(subcommand)]
        command: DistCommand,
    },
    /// Sim-mode comparison sweeps.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// gt-reward | uniform-init | vary-KN | epochs
        #[arg(long)]
        ablation: String,
    },
    /// Write a replayable simenv-v1 environment batch.
    Simgen {
        #[arg(long)]
        config: PathBuf,
        /// Output file (defaults to <out>/sim_batch.json).
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum DistCommand {
    /// Average per-video distributions into a global prior.
    Merge {
        output: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Resample a distribution onto a different frame grid.
    Interpolate {
        /// Target grid size.
        #[arg(long)]
        frames: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Convex combination of a CLIP-score distribution and a learned one.
    Blend {
        #[arg(long)]
        w_clip: f64,
        #[arg(long)]
        w_dist: f64,
        clip: PathBuf,
        learned: PathBuf,
        output: PathBuf,
    },
    /// Emit plot-ready CSV (frame_index,prob).
    Show {
        input: PathBuf,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn apply_overrides(config: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(backend) = &cli.backend {
        config.backend = match backend.as_str() {
            "sim" => BackendKind::Sim,
            "remote" => BackendKind::Remote,
            other => return Err(CliError::Config(format!("unknown backend {other:?}"))),
        };
    }
    Ok(())
}

fn parse_baseline(value: &str) -> Result<Baseline, CliError> {
    match value {
        "learned" => Ok(Baseline::Learned),
        "random" => Ok(Baseline::Random),
        "clip" => Ok(Baseline::Clip),
        "self-consistency" => Ok(Baseline::SelfConsistency),
        other => Err(CliError::Config(format!(
            "unknown baseline {other:?}; expected learned | random | clip | self-consistency"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Adapt { config } => {
            let mut config = config::load_config(config)?;
            apply_overrides(&mut config, &cli)?;
            commands::adapt::run(&config)
        }
        Command::Infer { config, prior, policy, baseline, votes, frames, interpolate } => {
            let mut config = config::load_config(config)?;
            apply_overrides(&mut config, &cli)?;
            if let Some(baseline) = baseline {
                config.infer.baseline = parse_baseline(baseline)?;
            }
            if let Some(votes) = votes {
                config.infer.votes = *votes;
            }
            if let Some(frames) = frames {
                config.infer.frames = *frames;
            }
            if *interpolate {
                config.infer.interpolate = true;
            }
            commands::infer::run(&config, prior.as_deref(), policy.as_deref())
        }
        Command::Dist { command } => match command {
            DistCommand::Merge { output, inputs } => commands::dist::merge(output, inputs),
            DistCommand::Interpolate { frames, input, output } => {
                commands::dist::interpolate(*frames, input, output)
            }
            DistCommand::Blend { w_clip, w_dist, clip, learned, output } => {
                commands::dist::blend(*w_clip, *w_dist, clip, learned, output)
            }
            DistCommand::Show { input, csv } => commands::dist::show(input, csv.as_deref()),
        },
        Command::Ablate { config, ablation } => {
            let mut config = config::load_config(config)?;
            apply_overrides(&mut config, &cli)?;
            let ablation: Ablation = ablation.parse().map_err(CliError::Config)?;
            commands::ablate::run(&config, ablation)
        }
        Command::Simgen { config, file } => {
            let mut config = config::load_config(config)?;
            apply_overrides(&mut config, &cli)?;
            commands::simgen::run(&config, file.as_deref())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
