use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stemgnn::error::Error;
use stemgnn_cli::commands;

#[derive(Parser)]
#[command(
    name = "stemgnn",
    about = "Spectral temporal graph forecasting: train, evaluate and dissect models over multivariate series",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus the training log
    Train {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Continue from a resume checkpoint instead of a fresh init
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split with rolling inference
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the config's evaluation horizon
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Roll predictions past the end of the series
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        horizon: usize,
    },
    /// Train and score the full model plus all six component ablations
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Adjacency file for the fixed-graph variant (falls back to the config)
        #[arg(long)]
        adjacency: Option<PathBuf>,
    },
    /// Audit analytic gradients against finite differences on a tiny model
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Generate a synthetic dataset and its true adjacency
    Synth {
        /// graph-diffusion-sines | covid-wave
        #[arg(long, default_value = "graph-diffusion-sines")]
        kind: String,
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise level as a fraction of signal amplitude
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Number of shared sinusoids (diffusion generator)
        #[arg(long, default_value_t = 2)]
        waves: usize,
        /// Series CSV path; the adjacency lands next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the mean learned adjacency over the training windows
    ExportGraph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export leading spectral components and their temporal-cell outputs
    ExportSpectral {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// largest | smallest
        #[arg(long, default_value = "largest")]
        order: String,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Io(_) | Error::Dimension(_) | Error::Domain(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; usage problems exit 1
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Train { config, resume } => commands::cmd_train(config, resume.as_deref()),
        Command::Eval { config, checkpoint, horizon } => {
            commands::cmd_eval(config, checkpoint, *horizon)
        }
        Command::Forecast { config, checkpoint, horizon } => {
            commands::cmd_forecast(config, checkpoint, *horizon)
        }
        Command::Ablate { config, adjacency } => {
            commands::cmd_ablate(config, adjacency.as_deref())
        }
        Command::Gradcheck { seed } => commands::cmd_gradcheck(*seed),
        Command::Synth { kind, nodes, steps, seed, noise, waves, out } => {
            commands::cmd_synth(kind, *nodes, *steps, *seed, *noise, *waves, out)
        }
        Command::ExportGraph { config, checkpoint } => {
            commands::cmd_export_graph(config, checkpoint)
        }
        Command::ExportSpectral { config, checkpoint, components, order } => {
            commands::cmd_export_spectral(config, checkpoint, *components, order)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
