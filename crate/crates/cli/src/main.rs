use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod render;

use commands::CliError;

/// Row-crop waypoint generation: synthetic fields, training, prediction,
/// evaluation and coverage planning.
#[derive(Debug, Parser)]
#[command(name = "cway", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of occupancy grids and waypoint labels.
    Generate(GenerateArgs),
    /// Train a model on a dataset split.
    Train(TrainArgs),
    /// Predict labeled waypoints for one grid or a split directory.
    Predict(PredictArgs),
    /// Score a model or a classical baseline on a dataset split.
    Eval(EvalArgs),
    /// Build an A-B-B-A coverage path from labeled waypoints.
    Plan(PlanArgs),
    /// Draw a grid with its waypoints and path into an RGB PNG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Images per split as TRAIN,VAL,TEST.
    #[arg(long, default_value = "400,0,100")]
    pub count: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 800)]
    pub size: usize,
    /// Bend the rows into quadratic Bezier curves.
    #[arg(long)]
    pub curved: bool,
    /// Use the strong bend range (implies --curved).
    #[arg(long)]
    pub strong: bool,
    /// Fraction of curved images when --curved is set.
    #[arg(long)]
    pub curved_fraction: Option<f64>,
    /// JSON generator config; flags above override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Estimation,
    Clustering,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (its `train` split is used) or a split directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write; the loss history goes next to it as `.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
    pub phase: PhaseArg,
    /// Start from this checkpoint (required for the clustering phase).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use only the first N images of the split.
    #[arg(long)]
    pub count_limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Confidence threshold.
    #[arg(long, default_value_t = 0.4)]
    pub t_p: f64,
    /// Suppression radius in pixels.
    #[arg(long, default_value_t = 8.0)]
    pub t_sup: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A PNG grid, or a split directory with `images/`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON file, or a directory when the input is a directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Model,
    Kmeans,
    Dbscan,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory (its `test` split is used) or a split directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Model)]
    pub baseline: Method,
    /// Model checkpoints, one run each. Baselines cluster the model's
    /// predictions when given, the ground-truth points otherwise.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "2,3,4,6,8")]
    pub radii: String,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// DBSCAN neighborhood radius in pixels.
    #[arg(long, default_value_t = 25.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 2)]
    pub min_pts: usize,
    #[arg(long)]
    pub count_limit: Option<usize>,
    /// Report JSON; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Prediction or label JSON with a `waypoints` array.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Prediction or label JSON.
    #[arg(long)]
    pub waypoints: Option<PathBuf>,
    /// Path JSON written by `plan`.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CW_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Plan(a) => commands::plan(&a),
        Command::Render(a) => render::render(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
