use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use synsel::pipeline::Regime;
use synsel::{Method, Strategy};

#[derive(Debug, Parser)]
#[command(
    name = "synsel",
    version,
    about = "Select synthetic training data by influence and n-gram diversity"
)]
pub struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize datasets to token JSONL and build the vocabulary.
    Ingest(IngestArgs),
    /// Fit the task model on a training set.
    Train(TrainArgs),
    /// Estimate the influence of every pool candidate on validation loss.
    Score(ScoreArgs),
    /// Choose a subset of the pool.
    Select(SelectArgs),
    /// Replace pool labels with the model's predictions.
    Relabel(RelabelArgs),
    /// Run the full workflow from a config file.
    Pipeline(PipelineArgs),
    /// Accuracy and loss of a model on a dataset.
    Eval(EvalArgs),
    /// Hutchinson estimate of the training-objective Hessian trace.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Random,
    Diversity,
    Combo,
    Influence,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Diversity => Strategy::Diversity,
            StrategyArg::Combo => Strategy::Combo,
            StrategyArg::Influence => Strategy::Influence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Cg,
    Lissa,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cg => Method::Cg,
            MethodArg::Lissa => Method::Lissa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum RegimeArg {
    TwoStage,
    Mixed,
    Weighted,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::TwoStage => Regime::TwoStage,
            RegimeArg::Mixed => Regime::Mixed,
            RegimeArg::Weighted => Regime::Weighted,
        }
    }
}

/// Class count for datasets that lack a header file.
#[derive(Debug, Args)]
pub struct ClassArgs {
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature n-gram order.
    #[arg(long, default_value_t = 1)]
    pub ngram: usize,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[command(flatten)]
    pub classes: ClassArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config; supplies the organic training settings and dataset paths.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub classes: ClassArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory holding `params.json` and `vocab.json`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Run config; supplies the inverse-HVP settings and default seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_enum, default_value = "combo")]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub n: usize,
    /// Diversity n-gram order.
    #[arg(long, default_value_t = 1)]
    pub ngram: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Influence report written by `score`; required for combo and influence.
    #[arg(long)]
    pub influence_report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub classes: ClassArgs,
}

#[derive(Debug, Args)]
pub struct RelabelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub ngram: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub relabel: Option<Switch>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, alias = "val")]
    pub data: PathBuf,
    /// Where to write the report; stdout gets the summary either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
