use serde::Serialize;
use thiserror::Error;

/// One violated model invariant, located by a JSON pointer into the model document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub pointer: String,
    pub invariant: String,
}

impl Violation {
    pub fn new(pointer: impl Into<String>, invariant: impl Into<String>) -> Self {
        Self {
            pointer: pointer.into(),
            invariant: invariant.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("model parse error: {0}")]
    Parse(String),

    #[error("invalid model: {}", .0.iter().map(|v| format!("{}: {}", v.pointer, v.invariant)).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Violation>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("Blumenthal-Getoor index indeterminate: {0}")]
    IndeterminateIndex(String),

    #[error("atom-sum budget of {budget} partial sums exceeded at k = {k}")]
    BudgetExceeded { k: usize, budget: usize },

    #[error("accuracy failure: achieved {achieved:.3e}, requested {requested:.3e} ({context})")]
    AccuracyFailure {
        achieved: f64,
        requested: f64,
        context: String,
    },

    #[error("point x = {x} is outside the certified series radius (m(x) = {m:.4} > 1/2); use the Volterra solver")]
    OutOfRadius { x: f64, m: f64 },

    #[error("Volterra step-halving did not converge: estimated error {achieved:.3e} > 10 x tol {tol:.3e}")]
    ConvergenceFailure { achieved: f64, tol: f64 },

    #[error("pole of the transform at s = 0")]
    Pole,

    #[error("near-singular denominator |1 + L/drift| = {0:.3e} on the contour")]
    NearSingularDenominator(f64),

    #[error("split order N = {given} too small; need N >= {required}")]
    OrderTooSmall { given: usize, required: usize },

    #[error("fit window contains breakpoint {0}; shrink the window")]
    WindowContainsBreakpoint(f64),

    #[error("not enough grid nodes in window: {found} < {needed}")]
    WindowTooSmall { found: usize, needed: usize },

    #[error("classification error: {0}")]
    Classification(String),

    #[error("denominator underflow at x = {0:e}; shrink the grid")]
    ShrinkGrid(f64),
}

impl Error {
    /// Stable machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::InvalidModel(_) => "invalid-model",
            Error::Domain(_) => "domain",
            Error::Precondition(_) => "precondition",
            Error::IndeterminateIndex(_) => "indeterminate-index",
            Error::BudgetExceeded { .. } => "budget-exceeded",
            Error::AccuracyFailure { .. } => "accuracy-failure",
            Error::OutOfRadius { .. } => "out-of-radius",
            Error::ConvergenceFailure { .. } => "convergence-failure",
            Error::Pole => "pole",
            Error::NearSingularDenominator(_) => "near-singular-denominator",
            Error::OrderTooSmall { .. } => "order-too-small",
            Error::WindowContainsBreakpoint(_) => "window-breakpoint",
            Error::WindowTooSmall { .. } => "window-too-small",
            Error::Classification(_) => "classification",
            Error::ShrinkGrid(_) => "shrink-grid",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
