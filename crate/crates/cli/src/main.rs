#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;
mod range;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use subpot_core::Error;

#[derive(Debug, Parser)]
#[command(name = "subpot", version, about = "Potential densities of drift-positive subordinators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate u and its one-sided derivatives on a grid of points.
    Eval(EvalArgs),
    /// Evaluate by Bromwich inversion with explicit contour settings.
    Invert(EvalArgs),
    /// Classify differentiability and measure derivative jumps.
    Smoothness(SmoothnessArgs),
    /// List the points that are sums of at most k atoms.
    Gk(GkArgs),
    /// Check an asymptotic law on a grid.
    Asymptotics(AsymptoticsArgs),
    /// Monte Carlo creeping frequencies.
    Simulate(SimulateArgs),
    /// Compare the Laplace transform of u with 1/(q + psi).
    Crosscheck(CrosscheckArgs),
    /// Validate a model file and print its canonical form.
    Validate(ModelArg),
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file (written atomically); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Spacing {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Route {
    Auto,
    Series,
    Volterra,
    Inversion,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Points as `min:max:steps`, a comma list, or a single value.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    #[arg(long, value_enum, default_value_t = Spacing::Linear)]
    spacing: Spacing,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = Route::Auto)]
    route: Route,
    /// Absolute error target.
    #[arg(long)]
    tol: Option<f64>,
    /// Split order N of the inversion.
    #[arg(long)]
    order: Option<usize>,
    /// Contour abscissa lambda.
    #[arg(long)]
    contour_lambda: Option<f64>,
    /// Truncation of the contour integral.
    #[arg(long)]
    theta_cut: Option<f64>,
    /// Base step of the Volterra mesh.
    #[arg(long)]
    h: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SmoothnessArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    grid: GridArgs,
    /// Highest derivative order examined.
    #[arg(long, default_value_t = subpot_core::smoothness::DEFAULT_K_MAX)]
    k: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct GkArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    xmax: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct AsymptoticsArgs {
    #[command(flatten)]
    model: ModelArg,
    /// zero-series, linear-zero, du-zero or du-infinity.
    #[arg(long)]
    law: String,
    /// Grid; defaults depend on the law.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    #[arg(long, value_enum, default_value_t = Spacing::Geometric)]
    spacing: Spacing,
    /// Series order for zero-series.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Small-jump truncation; required for infinite activity.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Killing rate; defaults to the model's q.
    #[arg(long)]
    q: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CrosscheckArgs {
    #[command(flatten)]
    model: ModelArg,
    /// One or more comma-separated transform arguments.
    #[arg(long)]
    lambda: String,
    /// Allowed |lhs − rhs| beyond the analytic tail bound.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[command(flatten)]
    output: OutputArgs,
}

/// Failure carrying the process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub body: serde_json::Value,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        let msg = msg.into();
        Self {
            code: 2,
            body: serde_json::json!({ "error": "usage", "message": msg }),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        let msg = msg.into();
        Self {
            code: 1,
            body: serde_json::json!({ "error": "io", "message": msg }),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse(_) | Error::InvalidModel(_) | Error::Domain(_) => 2,
            Error::AccuracyFailure { .. } | Error::ConvergenceFailure { .. } | Error::NearSingularDenominator(_) => 3,
            Error::Precondition(_)
            | Error::IndeterminateIndex(_)
            | Error::Pole
            | Error::OrderTooSmall { .. }
            | Error::OutOfRadius { .. } => 4,
            _ => 1,
        };
        let mut body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
        match &e {
            Error::InvalidModel(v) => body["violations"] = serde_json::to_value(v).unwrap_or_default(),
            Error::AccuracyFailure { achieved, requested, .. } => {
                body["achieved"] = (*achieved).into();
                body["requested"] = (*requested).into();
            }
            Error::ConvergenceFailure { achieved, tol } => {
                body["achieved"] = (*achieved).into();
                body["requested"] = (*tol).into();
            }
            _ => {}
        }
        Self { code, body }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Eval(a) => commands::eval(&a, false),
        Command::Invert(a) => commands::eval(&a, true),
        Command::Smoothness(a) => commands::smoothness(&a),
        Command::Gk(a) => commands::gk(&a),
        Command::Asymptotics(a) => commands::asymptotics(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Crosscheck(a) => commands::crosscheck(&a),
        Command::Validate(a) => commands::validate(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.body);
            ExitCode::from(f.code)
        }
    }
}
