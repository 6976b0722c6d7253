//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "grasp",
    version,
    about = "Grasp stability prediction from force and pressure traces"
)]
pub struct Cli {
    /// Seed for every random choice (splits, initialization, generation).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Convert CSV or trace files into a dataset directory.
    Convert(ConvertArgs),
    /// Train one model on the training split of a dataset.
    Train(TrainArgs),
    /// Score checkpoints on a dataset.
    Eval(EvalArgs),
    /// Train per direction and score on every direction.
    CrossEval(CrossEvalArgs),
    /// Replay a trace through a checkpoint as a live stream.
    Simulate(SimulateArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Models × seeds over one dataset, with aggregate tables.
    Experiment(ExperimentArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Convert(_) => "convert",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::CrossEval(_) => "cross-eval",
            Command::Simulate(_) => "simulate",
            Command::GradCheck(_) => "grad-check",
            Command::Experiment(_) => "experiment",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory [default: $GRASP_OUT_DIR/<command>, else grasp-out/<command>].
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Force,
    Pressure,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 200)]
    pub n_sets: usize,
    #[arg(long, value_enum, default_value = "force")]
    pub profile: ProfileArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    /// CSV files, trace files, or directories of them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "force")]
    pub source: ProfileArg,
    /// Sampling rate of CSV inputs [default: 16.7 for force, 71 for pressure].
    #[arg(long)]
    pub freq_hz: Option<f64>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long)]
    pub weight: Option<String>,
    #[arg(long)]
    pub force_level: Option<String>,
    /// Pressure zero positions, comma separated [default: first row].
    #[arg(long, value_delimiter = ',')]
    pub initial: Option<Vec<f64>>,
    #[arg(long)]
    pub lift_step: Option<usize>,
    #[arg(long)]
    pub slip_onset: Option<usize>,
    #[arg(long)]
    pub drop_step: Option<usize>,
    /// Keep every k-th sample.
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Labeling knobs.
#[derive(Debug, Clone, Default, Args)]
pub struct LabelArgs {
    /// Force level (mN) below which the object counts as dropped.
    #[arg(long)]
    pub drop_threshold: Option<f64>,
    /// Consecutive low samples that confirm a drop.
    #[arg(long)]
    pub drop_sustain: Option<usize>,
    /// Steps before the drop labeled unstable.
    #[arg(long)]
    pub lead: Option<usize>,
    /// Pressure drop margin above the summed zero positions.
    #[arg(long)]
    pub pressure_margin: Option<f64>,
    /// Ignore recorded slip onsets and label with the lead rule only.
    #[arg(long)]
    pub no_slip_onset: bool,
    #[arg(long)]
    pub window_len: Option<usize>,
}

/// Everything that shapes a training run. Flags override `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON experiment configuration to start from.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Channels, e.g. `0-15` or `0,3,9`.
    #[arg(long)]
    pub channels: Option<String>,
    /// Train share of the set-level split.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub stratify: Option<String>,
    /// Share of the training sets held out for early stopping.
    #[arg(long)]
    pub validation_ratio: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, conflicts_with = "no_patience")]
    pub patience: Option<usize>,
    #[arg(long)]
    pub no_patience: bool,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// seeded-uniform or literal-zeros; all-zero weights leave every hidden unit identical.
    #[arg(long)]
    pub init_mode: Option<String>,
    /// per-step or last-step.
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// Feature pipeline of the baselines.
    #[arg(long)]
    pub feature_variant: Option<String>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Rows of history per baseline sample.
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    #[arg(long)]
    pub svm_lambda: Option<f64>,
    #[arg(long)]
    pub svm_lr0: Option<f64>,
    #[arg(long)]
    pub nb_empirical_priors: bool,
    #[arg(long)]
    pub max_train_samples: Option<usize>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value = "data-stft-lstm")]
    pub model: String,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long = "checkpoint", value_name = "FILE", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// `split.json` written by `train`; restricts scoring to its test sets.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<String>,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CrossEvalArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value = "data-stft-lstm")]
    pub model: String,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    /// Channels to stream [default: all].
    #[arg(long)]
    pub channels: Option<String>,
    /// Expected sampling rate; must match the trace.
    #[arg(long)]
    pub freq_hz: Option<f64>,
    /// Reset the stream state every N samples.
    #[arg(long)]
    pub reset_every: Option<usize>,
    /// JSON grip controller settings.
    #[arg(long, value_name = "FILE")]
    pub grip_config: Option<PathBuf>,
    /// Per-sensor, per-step inference budget in microseconds.
    #[arg(long, default_value_t = 4000.0)]
    pub budget_us: f64,
    /// Exit non-zero when the latency budget is missed.
    #[arg(long)]
    pub strict_latency: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    /// Variants to check [default: all four].
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 12)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pooled,
    PerDirection,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Registry names [default: the four LSTM variants].
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Seeds [default: --seed].
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}
