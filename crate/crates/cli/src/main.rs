//! `lorid` command-line laboratory.
//!
//! Exit codes: 0 success or passing check, 1 failing check, 2 usage or
//! runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lorid", version, about = "Low-rank iterative diffusion purification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset as a tensor file.
    GenData(GenDataArgs),
    /// Train a denoiser on a dataset and store it.
    TrainDenoiser(TrainDenoiserArgs),
    /// Train the toy classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Fit frozen Tucker factors on clean images.
    FitBasis(FitBasisArgs),
    /// Purify one sample or a batch.
    Purify(PurifyArgs),
    /// Emit theory curves as CSV.
    Curves(CurvesArgs),
    /// Run a numerical theorem check.
    Verify(VerifyArgs),
    /// Evaluate defenses against an attack.
    AttackEval(AttackEvalArgs),
    /// Sweep (t, L) and recommend a setting.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataKind {
    /// Standard normal vectors, shape (n, dim).
    Gaussian,
    /// Two-class stripe images, shape (n, H, W, 1).
    Stripes,
    /// Two unit-variance blobs in 2-D.
    TwoGaussians,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Vector dimension (gaussian only).
    #[arg(long)]
    dim: Option<usize>,
    /// Image height and width (stripes only).
    #[arg(long)]
    size: Option<usize>,
    /// Pixel noise standard deviation (stripes only).
    #[arg(long)]
    noise: Option<f64>,
    /// Distance between blob centres (two-gaussians only).
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Output tensor file.
    #[arg(long)]
    out: PathBuf,
    /// Output label file (labelled kinds only).
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DenoiserKind {
    /// Noise-prediction MLP trained by gradient descent.
    Mlp,
    /// Exact MMSE denoiser of a Gaussian moment-matched to the data.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActivationArg {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
struct TrainDenoiserArgs {
    /// Training data tensor (N, ...).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    kind: DenoiserKind,
    /// Run config; supplies the schedule and seed.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hidden layer widths (mlp only).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Momentum of plain SGD.
    #[arg(long)]
    momentum: Option<f64>,
    /// Covariance ridge (gaussian only).
    #[arg(long)]
    ridge: Option<f64>,
    /// CSV of per-epoch losses (mlp only).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainClassifierArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "tanh")]
    activation: ActivationArg,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// CSV of per-epoch losses.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitBasisArgs {
    /// Clean images (N, H, W, C).
    #[arg(long)]
    data: PathBuf,
    /// Run config; supplies patch and eta or ranks.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PurifyArgs {
    /// One sample shaped like the denoiser input, or a batch of them.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    denoiser: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Tucker basis, required when the config sets use_tucker.
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-loop CSV trace (single sample only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Clean reference for the trace distances.
    #[arg(long, requires = "trace")]
    reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurveKind {
    /// L * mmse(snr(t / L)) against L.
    Fig2,
    /// Gaussian and binary MMSE against snr.
    Mmse,
    /// alpha_bar and snr against t.
    Snr,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[arg(long, value_enum)]
    kind: CurveKind,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Effective time steps (fig2).
    #[arg(long, value_delimiter = ',', default_value = "200,400,600,900")]
    effective_t: Vec<usize>,
    /// Largest loop count (fig2).
    #[arg(long, default_value_t = 10)]
    l_max: usize,
    /// snr values (mmse).
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
    snr_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TheoremId {
    #[value(name = "1")]
    KlContraction,
    #[value(name = "2")]
    LowerBound,
    #[value(name = "3")]
    Sandwich,
    #[value(name = "4")]
    Loops,
    #[value(name = "5")]
    Tucker,
    #[value(name = "cor1")]
    Clean,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    theorem: TheoremId,
    /// Run config; supplies the schedule, trials and seed.
    #[arg(long)]
    config: PathBuf,
    /// CSV with the measured values.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare each distribution with itself (theorem 1).
    #[arg(long)]
    identical: bool,
    /// Number of random Gaussian pairs (theorem 1).
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    /// Data dimension of the Gaussian oracle checks.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Per-dimension perturbation sizes (theorems 2, 3, 5).
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5")]
    eps: Vec<f64>,
    /// Relative tolerance against 1/(1+snr) (theorem 2, cor1).
    #[arg(long, default_value_t = 0.03)]
    rel_tol: f64,
    /// Effective time steps (theorem 4).
    #[arg(long, value_delimiter = ',', default_value = "200,400,600,900")]
    effective_t: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    l_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackArg {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Linf,
    L2,
}

#[derive(Debug, Args)]
struct AttackOptions {
    #[arg(long, value_enum, default_value = "pgd")]
    attack: AttackArg,
    #[arg(long, value_enum, default_value = "linf")]
    norm: NormArg,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Defaults to epsilon / 4.
    #[arg(long)]
    step_size: Option<f64>,
    /// Valid input range as lo,hi.
    #[arg(long, allow_hyphen_values = true, default_value = "-1,1")]
    input_range: String,
}

#[derive(Debug, Args)]
struct ModelPaths {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    denoiser: PathBuf,
    /// Run config; supplies the schedule, t, L, sampler and seed.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    basis: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttackEvalArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[command(flatten)]
    attack: AttackOptions,
    /// CSV with columns defense,clean_accuracy,robust_accuracy.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[command(flatten)]
    attack: AttackOptions,
    #[arg(long, value_delimiter = ',')]
    t_grid: Vec<usize>,
    #[arg(long = "L-grid", alias = "l-grid", value_delimiter = ',')]
    l_grid: Vec<usize>,
    /// CSV with columns t,L,clean_accuracy,robust_accuracy,recommended.
    #[arg(long)]
    out: PathBuf,
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Done,
    CheckFailed,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(lorid_core::LoridError),
}

impl From<lorid_core::LoridError> for CliError {
    fn from(e: lorid_core::LoridError) -> Self {
        CliError::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainDenoiser(a) => commands::train_denoiser(a),
        Command::TrainClassifier(a) => commands::train_classifier(a),
        Command::FitBasis(a) => commands::fit_basis(a),
        Command::Purify(a) => commands::purify(a),
        Command::Curves(a) => commands::curves(a),
        Command::Verify(a) => commands::verify(a),
        Command::AttackEval(a) => commands::attack_eval(a),
        Command::Calibrate(a) => commands::calibrate(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
