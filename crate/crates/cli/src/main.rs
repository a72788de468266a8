//! `ellipticfund`: exponents, fundamental solutions, annulus solves,
//! singularity classification and the exit game from the command line.
//!
//! Every structured result is written as canonical JSON; curves and fields
//! are written as CSV. Exit codes: 0 success, 1 I/O failure, 2 invalid
//! configuration, 3 non-convergence, 4 inconclusive classification.

mod commands;
mod load;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "ellipticfund", version, about = "Scaling exponents and fundamental solutions of fully nonlinear elliptic operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit ellipticity, homogeneity and the Pucci sandwich.
    Check(CheckArgs),
    /// Compute the scaling exponent.
    Exponent(ExponentArgs),
    /// Write the angular profile of the fundamental solution (CSV).
    Profile(ProfileArgs),
    /// Solve the annulus value problem (u = 1 inside, 0 outside; CSV field).
    Annulus(AnnulusArgs),
    /// Classify a test function's singularity at the origin or at infinity.
    Classify(ClassifyArgs),
    /// Estimate the exit probability of the associated game.
    Game(GameArgs),
    /// Exit probabilities over a ladder of inner radii and the fitted exponent (CSV).
    Ladder(LadderArgs),
}

/// Operator source and options shared by every command.
#[derive(Args, Debug, Clone)]
pub struct OpArgs {
    /// Builtin operator: pucci+, pucci-, laplacian, linear, f1, f2.
    #[arg(long, conflicts_with = "spec_file")]
    pub op: Option<String>,
    /// JSON operator spec.
    #[arg(long)]
    pub spec_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long = "Lambda", default_value_t = 2.0)]
    pub big_lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the main artifact (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub op: OpArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Auto,
    Rotinv,
    Circle,
}

#[derive(Args, Debug)]
pub struct ExponentArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 256)]
    pub ntheta: usize,
    /// Relative enclosure width of the circle eigenvalue.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[arg(long, default_value_t = 256)]
    pub ntheta: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct AnnulusArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[arg(long, default_value_t = 0.25)]
    pub rinner: f64,
    #[arg(long, default_value_t = 1.0)]
    pub router: f64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    pub grid_h: f64,
    /// Converged when the residual is at most tol/h.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndArg {
    Origin,
    Infinity,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyArg {
    /// coef·Φ + offset
    Phi,
    /// −coef·Φ̃ + offset
    MinusPhiTilde,
    /// coef·(x₁² − x₂²)
    Saddle,
    /// offset
    Constant,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[arg(long, value_enum, default_value_t = EndArg::Origin)]
    pub at: EndArg,
    #[arg(long, value_enum, default_value_t = FamilyArg::Phi)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 1.0)]
    pub coef: f64,
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 256)]
    pub ntheta: usize,
}

#[derive(Args, Debug)]
pub struct GameArgs {
    #[command(flatten)]
    pub op: OpArgs,
    #[arg(long, default_value_t = 0.25)]
    pub r: f64,
    #[arg(long = "R", default_value_t = 1.0)]
    pub big_r: f64,
    /// Start point: a radius along e₁ or comma-separated coordinates.
    #[arg(long, default_value = "0.5")]
    pub x0: String,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
}

#[derive(Args, Debug)]
pub struct LadderArgs {
    #[command(flatten)]
    pub op: OpArgs,
    /// Comma-separated, strictly decreasing inner radii.
    #[arg(long, default_value = "0.2,0.1,0.05,0.025")]
    pub r: String,
    #[arg(long = "R", default_value_t = 4.0)]
    pub big_r: f64,
    #[arg(long, default_value = "0.5")]
    pub x0: String,
    #[arg(long, default_value_t = 20_000)]
    pub paths: usize,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        CliError { code: 2, kind: "invalid_config", message: message.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError { code: 1, kind: "io", message: format!("{}: {err}", path.display()) }
    }
}

impl From<ellipticfund::Error> for CliError {
    fn from(e: ellipticfund::Error) -> Self {
        use ellipticfund::Error as E;
        let (code, kind) = match &e {
            E::InvalidInput(_) | E::DimensionMismatch { .. } | E::Decomposition { .. } => (2, "invalid_config"),
            E::Convergence { .. }
            | E::StepSize { .. }
            | E::Bracket { .. }
            | E::MonotonicityAudit { .. }
            | E::LadderTooDeep { .. } => (3, "non_convergence"),
            E::Inconclusive(_) | E::NotPowerLaw(_) | E::UndefinedRatio { .. } => (4, "inconclusive"),
            E::Internal(_) => (1, "internal"),
        };
        CliError { code, kind, message: e.to_string() }
    }
}

fn fail(err: &CliError) -> ExitCode {
    let body = json!({"error": {"code": err.code, "kind": err.kind, "message": err.message}});
    eprintln!("{}", report::canonical(&body));
    ExitCode::from(err.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::invalid(e.to_string().trim_end())),
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
