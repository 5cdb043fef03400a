use std::path::PathBuf;

use annobert_core::{EmbeddingSource, Pooling, Subset, TargetMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Layout;

#[derive(Debug, Parser)]
#[command(name = "annobert", version, about = "Annotator-aware classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a JSONL annotation file and write a preprocessed dataset.
    Preprocess(PreprocessArgs),
    /// Write a synthetic JSONL annotation file.
    Generate(GenerateArgs),
    /// Fit annotator embeddings on the training split.
    FitEmbeddings(Overrides),
    /// Train and evaluate a preset over several seeds.
    TrainEval(Overrides),
    /// PCA, clustering and agreement correlation of embedding files.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Tag this share of entries as test when the input has no split tags.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LayoutArg {
    TwoBloc,
    Uniform,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::TwoBloc => Layout::TwoBloc,
            LayoutArg::Uniform => Layout::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2000)]
    pub instances: usize,
    #[arg(long, default_value_t = 8)]
    pub annotators: usize,
    #[arg(long, value_enum, default_value_t = LayoutArg::TwoBloc)]
    pub layout: LayoutArg,
    #[arg(long)]
    pub base_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_core<T: std::str::FromStr<Err = annobert_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: annobert_core::Error| e.to_string())
}

/// Flags layered over the optional TOML config.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file (`.jsonl` annotations or dataset JSON).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Embedding source for fit-embeddings.
    #[arg(long, value_parser = parse_core::<EmbeddingSource>)]
    pub source: Option<EmbeddingSource>,
    /// CTR latent dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub allow_any_dim: bool,
    #[arg(long, value_parser = parse_core::<Pooling>)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub label_preset: Option<String>,
    #[arg(long, value_parser = parse_core::<TargetMode>)]
    pub target_mode: Option<TargetMode>,
    #[arg(long)]
    pub freeze_annotator: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub em_iters: Option<usize>,
    #[arg(long)]
    pub lda_iters: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_core::<Subset>)]
    pub subset: Vec<Subset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Embedding files to analyse; repeat for a side-by-side comparison.
    #[arg(long = "embeddings", required = true)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long, default_value_t = annobert_core::analysis::DEFAULT_CLUSTERS)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}
