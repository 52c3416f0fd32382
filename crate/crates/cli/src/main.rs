//! `vcnet`: train, evaluate, gradient-check and inspect dual-stream models.

mod commands;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcnet_core::graph::Variant;
use vcnet_core::tensor::OpKind;

#[derive(Parser, Debug)]
#[command(name = "vcnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model, writing metrics, a checkpoint and a run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split of a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every block and the full mini model.
    Gradcheck(GradcheckArgs),
    /// Print the execution order, widths and parameter counts of a variant.
    Inspect(InspectArgs),
}

/// Exactly one dataset source.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct DataArgs {
    /// IDX image and label files.
    #[arg(long, num_args = 2, value_names = ["IMAGES", "LABELS"])]
    pub data_idx: Option<Vec<PathBuf>>,
    /// Light-field directory (`class/sample/view_r_c.pgm`); needs `--grid`.
    #[arg(long, value_name = "DIR", requires = "grid")]
    pub data_lf: Option<PathBuf>,
    /// Procedural ten-class textures with this many samples per class.
    #[arg(long, value_name = "N_PER_CLASS")]
    pub data_synthetic: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "mini")]
    pub variant: Variant,
    /// Seeds dataset generation, splitting, initialisation and training.
    #[arg(long)]
    pub seed: u64,
    /// Angular grid of a light-field dataset.
    #[arg(long, num_args = 2, value_names = ["U", "V"])]
    pub grid: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = vcnet_core::train::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Weight of the prediction-error penalty.
    #[arg(long, default_value_t = vcnet_core::train::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Output directory for `metrics.csv`, `manifest.txt` and the default
    /// checkpoint.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Checkpoint path; defaults to `<out>/model.vcn`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Data-parallel workers per batch.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write `wall_seconds` as 0 so reruns give byte-identical metrics.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Deliberately break one backward rule (self-test of the checker).
    #[arg(long, hide = true, value_name = "OP")]
    pub inject_fault: Option<OpKind>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long, default_value = "mini")]
    pub variant: Variant,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Square input extent.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
