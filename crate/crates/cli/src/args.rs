use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgecnn::{Precision, Variant};

#[derive(Parser, Debug)]
#[command(name = "edgecnn", version, about = "Train, evaluate and profile EdgeCNN facial-expression models")]
#[command(propagate_version = true, args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write metrics.csv, best.ckpt and last.ckpt to --out.
    Train(TrainArgs),
    /// Ten-crop accuracy and confusion matrix of a checkpoint.
    Eval(EvalArgs),
    /// Parameter, MAC, memory and latency report.
    Profile(ProfileArgs),
    /// Forward latency and grouped-vs-dense convolution timing tables.
    Bench(BenchArgs),
    /// Per-stage output shapes.
    Trace(TraceArgs),
    /// Rewrite a fully condensed checkpoint in packed grouped form.
    Export(ExportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Edgecnn,
    #[value(name = "edgecnn-g")]
    EdgecnnG,
}

impl From<Arch> for Variant {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Edgecnn => Variant::Dense,
            Arch::EdgecnnG => Variant::Grouped,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Fer2013,
    Rafdb,
    Synthetic,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Key = value file supplying defaults for any long flag of this subcommand.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for kernels and evaluation.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value_t = DatasetKind::Synthetic)]
    pub dataset: DatasetKind,
    /// FER-2013 CSV (or its directory), RAF-DB root, or synthetic fixture directory.
    /// Synthetic data is generated from --seed when omitted.
    #[arg(long, value_name = "PATH")]
    pub data_dir: Option<PathBuf>,
    /// RAF-DB label list; defaults to EmoLabel/list_patition_label.txt under --data-dir.
    #[arg(long, value_name = "FILE")]
    pub label_file: Option<PathBuf>,
    /// Generated synthetic images per class in the training split.
    #[arg(long, default_value_t = 10)]
    pub synthetic_per_class: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Arch::Edgecnn)]
    pub arch: Arch,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "edgecnn-run")]
    pub out: PathBuf,
    /// Resume from a training checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// Apply weight decay to biases and batch-norm parameters too.
    #[arg(long)]
    pub decay_all: bool,
    /// Train on a class-balanced subset with this many images per class.
    #[arg(long, value_name = "N")]
    pub subset_per_class: Option<usize>,
    /// Stop once training accuracy reaches this fraction.
    #[arg(long, value_name = "FRACTION")]
    pub stop_at_acc: Option<f64>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Ten random crops instead of the fixed corner/center set.
    #[arg(long)]
    pub random_crops: bool,
    /// Element precision for inference; defaults to the checkpoint's.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
}

#[derive(Args, Debug, Clone)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Arch::Edgecnn)]
    pub arch: Arch,
    /// Profile a saved model instead of a fresh one.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Run every condensing stage before profiling (edgecnn-g).
    #[arg(long)]
    pub condensed: bool,
    /// Timed forward passes (at least 30).
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    /// Report static counts only.
    #[arg(long)]
    pub skip_timing: bool,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Arch::Edgecnn)]
    pub arch: Arch,
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
}

#[derive(Args, Debug, Clone)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Arch::Edgecnn)]
    pub arch: Arch,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fully condensed input checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Output checkpoint path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Lower learned group convolutions to index-select + grouped convolution.
    #[arg(long)]
    pub grouped: bool,
}
