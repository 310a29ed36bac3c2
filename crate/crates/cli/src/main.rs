mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridgauss::GridShape;
use output::{Format, Precision};

#[derive(Debug, Parser)]
#[command(name = "gridgauss", version, about = "Structured Gaussians over image grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output path (a file, or a prefix for models).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Gmap)]
    pub format: Format,
    /// Element type for GMAP output.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a bundle of sample maps.
    Fit(FitArgs),
    /// Draw samples from a model.
    Sample(SampleArgs),
    /// Draw samples conditioned on known pixels.
    Condition(ConditionArgs),
    /// Log-density of each map in a bundle.
    Logprob(LogprobArgs),
    /// Render the covariance between one pixel and all others.
    Introspect(IntrospectArgs),
    /// Generate a synthetic sample bundle.
    Synth(SynthArgs),
    /// Depth metrics and sparsification curves.
    Eval(EvalArgs),
    /// Compare sparse operations with the dense reference on random models.
    OracleCheck(OracleCheckArgs),
    /// Time Jacobi sampling over grid sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sample bundle (GMAP or CSV), one channel per sample.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub radius: u8,
    #[arg(long)]
    pub diagonal_only: bool,
    /// Use the bounded, scaled factor parameterization.
    #[arg(long)]
    pub scaled: bool,
    /// Keep the mean fixed at the sample mean.
    #[arg(long)]
    pub fixed_mean: bool,
    #[arg(long, default_value_t = 3000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Lower bound on per-pixel variance; 0 disables it.
    #[arg(long, default_value_t = 1e-6)]
    pub variance_floor: f64,
    #[arg(long, value_enum, default_value_t = InitArg::SmallOffdiag)]
    pub init: InitArg,
    /// Where to write the fit report (stdout otherwise).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Identity,
    SmallOffdiag,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Model prefix (PREFIX.mean.gmap, PREFIX.chol.gmap, PREFIX.json).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = gridgauss::linops::DEFAULT_JACOBI_ITERATIONS)]
    pub jacobi_iters: usize,
    /// Squash samples into (MIN, MAX) with a scaled sigmoid, as "MIN,MAX".
    #[arg(long, value_parser = parse_pair::<f64>)]
    pub sigmoid: Option<(f64, f64)>,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Map whose non-zero pixels are known.
    #[arg(long)]
    pub mask: PathBuf,
    /// Map holding the known values (other pixels are ignored).
    #[arg(long)]
    pub values: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = gridgauss::linops::DEFAULT_JACOBI_ITERATIONS)]
    pub jacobi_iters: usize,
    /// Write the conditional mean instead of samples.
    #[arg(long)]
    pub mean_only: bool,
    #[arg(long, default_value_t = gridgauss::conditioning::DEFAULT_CG_TOLERANCE)]
    pub cg_tol: f64,
}

#[derive(Debug, Args)]
pub struct LogprobArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntrospectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pixel as "y,x".
    #[arg(long, value_parser = parse_pair::<usize>)]
    pub pixel: (usize, usize),
    #[arg(long, value_enum, default_value_t = Render::Pgm)]
    pub render: Render,
    /// One signed image, or separate positive and negative images.
    #[arg(long, value_enum, default_value_t = RenderMode::Signed)]
    pub mode: RenderMode,
    /// Solve with this many Jacobi iterations instead of exactly.
    #[arg(long)]
    pub jacobi_iters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Render {
    /// Heatmap of the signed square root, clipped.
    Pgm,
    /// The covariance row itself, in --format.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Signed,
    Split,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKindArg,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Grid size as "HxW"; taken from the model when one is given.
    #[arg(long)]
    pub shape: Option<GridShape>,
    /// Ground-truth model prefix; a random one is drawn when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Save the generating model under this prefix.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
    #[arg(long, default_value_t = 2.0)]
    pub length_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKindArg {
    GroundTruth,
    SmoothField,
    DiagonalNoise,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions, one channel per pair.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub uncertainty: PathBuf,
    /// Map whose non-zero pixels are evaluated (all pixels otherwise).
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, default_value_t = gridgauss::metrics::DEFAULT_FRACTION_STEPS)]
    pub steps: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV summary averaged over pairs.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    #[arg(long, default_value = "8x8")]
    pub max_size: GridShape,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "32x32,64x64,128x128,256x256")]
    pub sizes: Vec<GridShape>,
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
    #[arg(long, default_value_t = 100)]
    pub jacobi_iters: usize,
    #[arg(long, default_value_t = 2)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated values, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("GMRF_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("GMRF_THREADS must be a non-negative integer"))?;
    // 0 keeps rayon's automatic choice
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", serde_json::to_string_pretty(&commands::diagnostic(&err)).unwrap_or_default());
            ExitCode::from(1)
        }
    }
}
