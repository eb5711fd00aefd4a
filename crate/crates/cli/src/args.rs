use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tipforce_core::neural::Arch;

#[derive(Debug, Parser)]
#[command(
    name = "tipforce",
    version,
    about = "Needle insertion and tip-force sensing workbench"
)]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment manifest (TOML) overlaid on the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or check phantom documents.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Record synthetic calibration data.
    #[command(subcommand)]
    Sensor(SensorCmd),
    /// Train and evaluate tip-force regressors.
    #[command(subcommand)]
    Neural(NeuralCmd),
    /// Simulate insertions.
    #[command(subcommand)]
    Run(RunCmd),
    /// Detection and friction analysis of saved traces.
    Analyze(AnalyzeArgs),
    /// Every stage from phantoms to the final report.
    Pipeline(PipelineArgs),
    /// WebSocket server for an interactive UI.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCmd {
    /// Write generated phantoms as TOML (default out: phantoms/).
    Gen {
        /// Only the phantom with this index.
        #[arg(long)]
        index: Option<u64>,
        /// Number of phantoms when no index is given.
        #[arg(long, default_value_t = 4)]
        count: u64,
    },
    /// Parse and check phantom files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Rectified sum of sinusoids.
    Cyclic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamArg {
    Calibration,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum SensorCmd {
    /// Record (force, A-scan) pairs (default out: data/calibration.bin).
    Calibrate {
        /// Number of frames.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value_t = Profile::Cyclic)]
        profile: Profile,
        /// Random stream; the test stream is independent of calibration data.
        #[arg(long, value_enum, default_value_t = StreamArg::Calibration)]
        stream: StreamArg,
    },
}

#[derive(Debug, Subcommand)]
pub enum NeuralCmd {
    /// Train one architecture (default out: models/<arch>.ckpt).
    Train {
        #[arg(long)]
        arch: Arch,
        /// Calibration recording.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a recording.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON report; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Neural checkpoint used for in-loop estimates.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Estimator when no checkpoint is given: analytic or true.
    #[arg(long, default_value = "analytic")]
    pub estimator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OperatorKind {
    /// Scripted participants.
    Reactive,
    /// A person at the UI, through the WebSocket server.
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum RunCmd {
    /// Constant-velocity robotic insertions (default out: traces/).
    Auto {
        /// Phantom file or directory; the generated set when omitted.
        #[arg(long)]
        phantom: Option<PathBuf>,
        /// Insertion speed, mm/s.
        #[arg(long)]
        v: Option<f64>,
        /// Number of insertions, cycling through the phantoms.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
    /// Collaborative insertions (default out: traces/).
    Collab {
        #[arg(long)]
        phantom: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OperatorKind::Reactive)]
        operator: OperatorKind,
        /// Fixed feedback gain; chosen per participant when omitted.
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of scripted participants.
        #[arg(long)]
        operators: Option<usize>,
        /// Port for `--operator remote`.
        #[arg(long)]
        port: Option<u16>,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of trace CSV files.
    #[arg(long)]
    pub traces: PathBuf,
    /// Phantom file or directory the traces were recorded on.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// JSON report; a text rendering is written next to it.
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
    /// Directory for downsampled plot series.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Analyze even when provenance stamps disagree.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Small sizes for a fast end-to-end check.
    #[arg(long)]
    pub quick: bool,
    /// Reuse checkpoints from a previous run in the output directory.
    #[arg(long)]
    pub skip_train: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub phantom: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    #[arg(long)]
    pub time_scale: Option<f64>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}
