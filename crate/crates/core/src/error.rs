use thiserror::Error;

/// Failures surfaced by the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    MismatchedGrid,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate scattering parameters (mu1={mu1}, mu2={mu2}, beta={beta}): {clause}")]
    DegenerateRegime {
        mu1: f64,
        mu2: f64,
        beta: f64,
        clause: String,
    },

    #[error("constraint set is empty: alpha={alpha} is below the threshold {threshold}")]
    InfeasibleConstraint { alpha: f64, threshold: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("retraction failed: {0}")]
    RetractFailure(String),

    #[error("multiplier fit is rank deficient: {0}")]
    SingularFit(String),

    #[error("gamma must be positive to rescale to physical masses, got {0}")]
    NonpositiveGamma(f64),

    #[error("{value} is outside the range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("theta={0} is not in the open interval (0, pi/2)")]
    ThetaDegenerate(f64),

    #[error("right-hand side is not orthogonal to the kernel: <rhs, phi> = {0:e}")]
    RhsNotOrthogonal(f64),

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("integrator fault: {0}")]
    IntegratorFault(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the sweep parameter to a propagated solver error.
    pub fn at_alpha(self, alpha: f64) -> Error {
        match self {
            Error::NoConvergence {
                what,
                iterations,
                residual,
            } => Error::NoConvergence {
                what: format!("{what} at alpha={alpha}"),
                iterations,
                residual,
            },
            Error::RetractFailure(msg) => Error::RetractFailure(format!("{msg} (alpha={alpha})")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
