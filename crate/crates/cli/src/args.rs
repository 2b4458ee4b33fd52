//! Flag definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tempocoh::models::{ModelKind, TcMode, FEATURE_MAP_GRID, KERNEL_WIDTH_GRID};

#[derive(Debug, Parser)]
#[command(name = "tempocoh", version, about = "Temporal-coherence video classification toolkit")]
pub struct Cli {
    /// Read `key=value` defaults from this file; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest; defaults next to the primary output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene-structured dataset.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus loss trace.
    Train(TrainArgs),
    /// Evaluate checkpoints overall and per taxonomy level.
    Evaluate(EvaluateArgs),
    /// Run the oracle suites.
    Verify(VerifyArgs),
    /// Dump learned kernels and attention weights as CSV.
    Inspect(InspectArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Verify(_) => "verify",
            Command::Inspect(_) => "inspect",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub videos: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 8)]
    pub frames_min: usize,
    #[arg(long, default_value_t = 16)]
    pub frames_max: usize,
    #[arg(long, default_value_t = 1)]
    pub scenes_min: usize,
    #[arg(long, default_value_t = 3)]
    pub scenes_max: usize,
    #[arg(long, default_value_t = 16)]
    pub video_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub audio_dim: usize,
    #[arg(long, default_value_t = 0.8)]
    pub audio_correlation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub centroid_scale: f64,
    /// Pad or truncate every record to this many frames.
    #[arg(long)]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Learning rate 0.0002, batch 128.
    Paper,
    /// Learning rate 0.005, batch 16, sized for desk-scale synthetic data.
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Bce,
    Hier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Literal,
    Blended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleArg {
    Raw,
    PerDimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    All,
    Train,
    Val,
    Test,
}

/// Which records a command sees.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
    pub split: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Recipe::Paper)]
    pub recipe: Recipe,
    /// Neighborhood radius.
    #[arg(long = "L", visible_alias = "radius", default_value_t = 2)]
    pub radius: usize,
    #[arg(long, value_parser = parse_mode, default_value = "exact")]
    pub tc_mode: TcMode,
    #[arg(long, default_value_t = 5, value_parser = parse_kernel_width)]
    pub kernel_width: usize,
    #[arg(long, default_value_t = 4, value_parser = parse_feature_maps)]
    pub feature_maps: usize,
    #[arg(long, value_enum, default_value_t = ScaleArg::Raw)]
    pub distance_scale: ScaleArg,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub dnn_hidden: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Overrides the recipe's learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides the recipe's batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Bce)]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value_t = VariantArg::Literal)]
    pub hier_variant: VariantArg,
    /// Weight of the segment label prior.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub top_n: usize,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 20)]
    pub top_n: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Level-by-model CSV; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    /// JSON report path.
    #[arg(long, default_value = "verify_report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Dataset holding the record named by `--record`.
    #[arg(long, requires = "record")]
    pub data: Option<PathBuf>,
    /// Record id whose attention weights are dumped.
    #[arg(long, requires = "data")]
    pub record: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest_path: PathBuf,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown model {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_mode(s: &str) -> Result<TcMode, String> {
    s.parse().map_err(|_| format!("unknown TC mode {s:?}; expected exact, gated, learned-gate or conv"))
}

fn parse_grid(s: &str, grid: &[usize], what: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if grid.contains(&v) {
        Ok(v)
    } else {
        Err(format!("{what} must be one of {grid:?}"))
    }
}

fn parse_kernel_width(s: &str) -> Result<usize, String> {
    parse_grid(s, &KERNEL_WIDTH_GRID, "kernel width")
}

fn parse_feature_maps(s: &str) -> Result<usize, String> {
    parse_grid(s, &FEATURE_MAP_GRID, "feature map count")
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated fractions".to_string())
}
