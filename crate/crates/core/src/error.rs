use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Schedule, target or perturbation parameters outside their domain.
    InvalidParams(String),
    /// Step index outside the range an operation accepts.
    StepOutOfRange { t: usize, min: usize, max: usize },
    DimensionMismatch { expected: usize, found: usize },
    /// Every point of a batch was flagged as near-singular.
    AllPointsFlagged,
    /// Adaptive quadrature did not stabilise within its refinement budget.
    NonConvergentGrid { last_change: f64 },
    /// Fitting input that cannot produce a fit (too few points, nonpositive values).
    DegenerateInput(String),
    /// A check was called outside the region where its inequality is claimed.
    PreconditionViolation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParams(msg) => write!(f, "invalid parameters: {msg}"),
            Error::StepOutOfRange { t, min, max } => {
                write!(f, "step {t} out of range [{min}, {max}]")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::AllPointsFlagged => write!(f, "all points flagged as near-singular"),
            Error::NonConvergentGrid { last_change } => {
                write!(f, "quadrature grid did not converge (last change {last_change:e})")
            }
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::PreconditionViolation(msg) => write!(f, "precondition violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
