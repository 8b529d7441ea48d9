use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod viz;

#[derive(Debug, Parser)]
#[command(name = "sdff", version, about = "Spiking swin transformer optical flow from event streams")]
struct Cli {
    /// Flat `section.key=value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic translating-pattern dataset.
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a metric log.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Write an energy report for a checkpoint.
    Energy(EnergyArgs),
    /// Render flow fields with the color wheel.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Constant flow `u,v` for every scene.
    #[arg(long)]
    pub flow: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    /// `dots` or `bars`.
    #[arg(long)]
    pub pattern: Option<String>,
    #[arg(long)]
    pub dots: Option<usize>,
    #[arg(long)]
    pub duration_us: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `synth`; scenes are synthesized in memory if absent.
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory; scenes are synthesized in memory if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `snn`, `ann` or `both`.
    #[arg(long, default_value = "both")]
    pub mode: String,
    /// Number of samples to profile.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// Render these `.flo` files instead of model predictions.
    #[arg(long, num_args = 1..)]
    pub flo: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub limit: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let global = commands::Global {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        force: cli.force,
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&global, &a),
        Command::Train(a) => commands::train(&global, &a),
        Command::Eval(a) => commands::eval(&global, &a),
        Command::Energy(a) => commands::energy(&global, &a),
        Command::Viz(a) => commands::viz(&global, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
