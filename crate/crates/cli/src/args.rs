use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cirt",
    version,
    about = "Circular transformer experiments: data, training, evaluation, figures",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    /// Rerun the command recorded in a frozen config file.
    #[arg(long, value_name = "FILE")]
    pub from_config: Option<PathBuf>,

    /// Output directory for the rerun; defaults to the recorded one.
    #[arg(long, value_name = "DIR", requires = "from_config")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset: daily tensor files plus a manifest.
    DataGen(DataGenArgs),
    /// Index a directory of dated tensor files as a dataset.
    Import(ImportArgs),
    /// Train a model and score its best checkpoint on the test split.
    Train(TrainArgs),
    /// Score a checkpoint on one split, globally and on requested slices.
    Eval(EvalArgs),
    /// Render an error map or a report as a PNG image.
    Plot(PlotArgs),
    /// Train and test the patching/Fourier matrix or the two training modes.
    Ablate(AblateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::DataGen(_) => "data-gen",
            Command::Import(_) => "import",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Plot(_) => "plot",
            Command::Ablate(_) => "ablate",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory (default: $CIRT_OUTPUT_ROOT/<command>).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for data generation, model initialization and data order.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataGenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "DEG")]
    pub lat_res: Option<f64>,
    #[arg(long, value_name = "DEG")]
    pub lon_res: Option<f64>,
    /// Number of variables.
    #[arg(long)]
    pub vars: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Noise amplitude relative to each variable's scale.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ImportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory holding YYYY-MM-DD.bin or YYYYMMDD.bin tensor files.
    #[arg(long, value_name = "DIR")]
    pub dir: Option<PathBuf>,
    /// Comma-separated variable names in channel order.
    #[arg(long, value_delimiter = ',')]
    pub vars: Option<Vec<String>>,
    #[arg(long, value_name = "DEG")]
    pub lat_res: Option<f64>,
    #[arg(long, value_name = "DEG")]
    pub lon_res: Option<f64>,
    /// Inclusive year range, e.g. 1979-2016.
    #[arg(long, value_name = "YEARS")]
    pub train_years: Option<String>,
    #[arg(long, value_name = "YEARS")]
    pub val_years: Option<String>,
    #[arg(long, value_name = "YEARS")]
    pub test_years: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatchingArg {
    Circular,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadDimArg {
    Split,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreScaleArg {
    KeyWidth,
    HiddenDim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Direct,
    Autoregressive,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, value_enum)]
    pub patching: Option<PatchingArg>,
    /// Patch side for grid patching.
    #[arg(long, value_name = "DEG")]
    pub grid_patch_deg: Option<f64>,
    #[arg(long, conflicts_with = "no_fourier")]
    pub fourier: bool,
    /// Attend over raw embeddings instead of their Fourier coefficients.
    #[arg(long)]
    pub no_fourier: bool,
    #[arg(long, value_enum)]
    pub head_dim_mode: Option<HeadDimArg>,
    #[arg(long, value_enum)]
    pub score_scale: Option<ScoreScaleArg>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Extra checkpoint every N epochs.
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
    /// Weight the loss by the cosine of latitude.
    #[arg(long)]
    pub weighted_loss: bool,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Use every N-th initialization date.
    #[arg(long, value_name = "N")]
    pub stride: Option<usize>,
    /// Comma-separated latitude bands: low, mid, high.
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
    /// Region preset (europe, north_america) or name:lat_min:lat_max:lon_min:lon_max.
    #[arg(long)]
    pub region: Vec<String>,
    /// Add a per-initialization-month breakdown.
    #[arg(long)]
    pub monthly: bool,
    /// Write per-point RMSE maps as tensor files.
    #[arg(long)]
    pub error_maps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKindArg {
    /// Heat map of an error-map tensor file.
    ErrorMap,
    /// Line chart of monthly RMSE from a report.
    Monthly,
    /// Heat map of RMSE per variable and window/slice from a report.
    Levels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    Weeks34,
    Weeks56,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub kind: Option<PlotKindArg>,
    /// Error-map tensor file or report TOML.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub variable: Option<String>,
    #[arg(long, value_enum)]
    pub window: Option<WindowArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    /// {grid, circular} × {without, with Fourier}.
    Patching,
    /// Direct against autoregressive training.
    Mode,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub study: Option<StudyArg>,
    /// Number of seeds, counted up from --seed (default 0).
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}
