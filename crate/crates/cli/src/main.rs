mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use difflrr::ErrorClass;

#[derive(Parser)]
#[command(
    name = "difflrr",
    version,
    about = "SVD-free differentiable low-rank regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate rank, nuclear norm, a Schatten-p power sum or a relaxed spectral sum.
    Estimate(EstimateArgs),
    /// Fill in the missing pixels of a grayscale image.
    Complete(CompleteArgs),
    /// Split a frame sequence into a low-rank background and a sparse foreground.
    Separate(SeparateArgs),
    /// Sweep one estimator or solver parameter and write a CSV of the results.
    Convergence(ConvergenceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stat {
    Rank,
    Nuclear,
    Schatten,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Relax {
    Nuclear,
    Laplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Taylor,
    Laguerre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Args, Debug)]
pub struct RelaxArgs {
    /// Penalty on the singular values
    #[arg(long, value_enum)]
    pub relax: Option<Relax>,
    /// Laplace scale γ in h(σ) = 1 − exp(−σ/γ)
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Polynomial expansion used for the penalty
    #[arg(long, value_enum, default_value_t = Mode::Laguerre)]
    pub mode: Mode,
    /// Expansion truncation: Taylor terms or Laguerre degree
    #[arg(long, default_value_t = 10)]
    pub trunc: usize,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Gaussian probes per estimate
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Pseudo-inverse iterations
    #[arg(long)]
    pub k1: Option<usize>,
    /// Newton–Schulz iterations
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct OptimArgs {
    /// Weight of the regularizer [default: data-scaled for completion, √max(pixels, frames) for separation]
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.03)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = Schedule::Cosine)]
    pub schedule: Schedule,
    /// Record losses every this many iterations (the last one is always kept)
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Matrix CSV
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Stat::Nuclear)]
    pub stat: Stat,
    /// Schatten exponent for --stat schatten
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    #[command(flatten)]
    pub relax: RelaxArgs,
    #[command(flatten)]
    pub probes: ProbeArgs,
    /// Also print the exact value from a Jacobi SVD
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("observed").required(true).args(["mask", "drop_frac"]))]
pub struct CompleteArgs {
    /// Input image (PGM, P2 or P5)
    #[arg(long)]
    pub image: PathBuf,
    /// Binary mask CSV of the image's shape, 1 = observed
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Drop this fraction of pixels at random instead of reading a mask
    #[arg(long)]
    pub drop_frac: Option<f64>,
    #[arg(long, default_value_t = 0, requires = "drop_frac")]
    pub mask_seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub relax: RelaxArgs,
    #[command(flatten)]
    pub probes: ProbeArgs,
    /// Recovered image (P5 PGM)
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration loss CSV
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Ground-truth image; prints the PSNR of the recovery
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    /// Directory of same-size PGM frames, in lexicographic order
    #[arg(long)]
    pub frames: PathBuf,
    /// Pseudo-Huber smoothing width
    #[arg(long, default_value_t = difflrr::solvers::DEFAULT_HUBER_DELTA)]
    pub delta: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub relax: RelaxArgs,
    #[command(flatten)]
    pub probes: ProbeArgs,
    #[arg(long)]
    pub out_bg: PathBuf,
    /// Foreground frames, offset to mid-gray
    #[arg(long)]
    pub out_fg: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConvergenceArgs {
    /// Parameter to sweep: k1, k2, samples or lambda
    #[arg(long)]
    pub sweep: difflrr::sweep::SweepAxis,
    /// Comma-separated values of the swept parameter
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<f64>,
    /// Matrix CSV; defaults to the seeded 30×30 study matrix
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[command(flatten)]
    pub probes: ProbeArgs,
    /// Solver iterations per λ
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => commands::estimate(&args),
        Command::Complete(args) => commands::complete(&args),
        Command::Separate(args) => commands::separate(&args),
        Command::Convergence(args) => commands::convergence(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numeric => 3,
                ErrorClass::Divergence => 4,
            })
        }
    }
}
