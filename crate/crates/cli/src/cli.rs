use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use handkd_core::losses::KdMode;
use handkd_core::nets::StudentSize;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "handkd", version, about = "Teacher/student distillation for synthetic hand reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hand rig.
    GenRig(GenRigArgs),
    /// Generate a synthetic heatmap dataset for a rig.
    GenData(GenDataArgs),
    /// Train the teacher network on ground truth and save it frozen.
    TrainTeacher(TrainTeacherArgs),
    /// Train a student against a frozen teacher.
    Distill(DistillArgs),
    /// Evaluate a model on the held-out split.
    Eval(EvalArgs),
    /// Report parameter counts and forward throughput.
    Bench(BenchArgs),
    /// Run a grid of distillation cells.
    Sweep(SweepArgs),
    /// Format sweep results as tables.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenRig(_) => "gen-rig",
            Command::GenData(_) => "gen-data",
            Command::TrainTeacher(_) => "train-teacher",
            Command::Distill(_) => "distill",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
            Command::Sweep(_) => "sweep",
            Command::Report(_) => "report",
        }
    }
}

fn parse_mode(s: &str) -> Result<String, String> {
    KdMode::parse(s)
        .map(|m| m.name().to_string())
        .ok_or_else(|| format!("unknown mode `{s}`; expected none, output, feature or combined"))
}

fn parse_size(s: &str) -> Result<String, String> {
    StudentSize::parse(s)
        .map(|m| m.name().to_string())
        .ok_or_else(|| format!("unknown student size `{s}`; expected small or large"))
}

#[derive(Debug, Args, Serialize)]
pub struct GenRigArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = handkd_core::hand::DEFAULT_VERTICES)]
    pub vertices: usize,
    /// Output rig file [default: rig.hkdr in the output directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub rig: PathBuf,
    /// Training samples.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Held-out samples.
    #[arg(long, default_value_t = 500)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of training samples without 3D labels.
    #[arg(long, default_value_t = 0.3)]
    pub frac_2d_only: f64,
    /// Heatmap Gaussian width, pixels.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// Focal length, pixels.
    #[arg(long, default_value_t = handkd_core::camera::DEFAULT_FOCAL)]
    pub focal: f64,
    /// Square image side, pixels.
    #[arg(long, default_value_t = handkd_core::camera::DEFAULT_IMAGE_SIZE)]
    pub image_size: usize,
    /// Output dataset file [default: data.hkdd in the output directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optimisation settings. Flags override the `--config` file, which
/// overrides the defaults.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Evaluate every this many epochs (0: last epoch only).
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model [default: teacher.hkdm in the output directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// none, output, feature or combined.
    #[arg(long, value_parser = parse_mode, default_value = "output")]
    pub mode: String,
    /// Weight of the distillation term [default: 0.5]
    #[arg(long)]
    pub lambda_kd: Option<f64>,
    /// Scale of the feature term inside it [default: 6]
    #[arg(long)]
    pub gamma_fd: Option<f64>,
    #[arg(long, value_parser = parse_size, default_value = "small")]
    pub student_size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output model [default: student.hkdm in the output directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// F-score thresholds in mm, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = handkd_core::metrics::DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    /// Metrics CSV [default: metrics.csv in the output directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Model file; repeat to compare several.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = handkd_core::camera::DEFAULT_FOCAL)]
    pub focal: f64,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Grid file, one `mode lambda gamma student_size seed` cell per line [default: built-in grid]
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = handkd_core::metrics::DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Timed forward passes per student (0: skip).
    #[arg(long, default_value_t = 0)]
    pub bench_iters: usize,
    /// [default: sweep in the output directory]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Md,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub sweep_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Md)]
    pub format: ReportFormat,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
