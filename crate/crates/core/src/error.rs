use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every module of the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("integral diverges: {0}")]
    Divergent(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("no sign change found while bracketing: {0}")]
    Bracket(String),
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("unstable kernel: {0}")]
    Stability(String),
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("profiles do not overlap on the requested interval: {0}")]
    InsufficientOverlap(String),
    #[error("profiles are indistinguishable at the noise floor")]
    Indistinguishable,
    #[error("resolution exhausted: {0}")]
    ResolutionExhausted(String),
    #[error("degenerate fit: {0}")]
    FitDegenerate(String),
    #[error("discretization fault: {0}")]
    Discretization(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Stable machine-readable code for CLI and FFI reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Spec(_) => "spec",
            Error::Divergent(_) => "divergent",
            Error::Overflow(_) => "overflow",
            Error::Bracket(_) => "bracket",
            Error::NonConvergence(_) => "non_convergence",
            Error::Stability(_) => "stability",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::OutOfRange(_) => "out_of_range",
            Error::InsufficientOverlap(_) => "insufficient_overlap",
            Error::Indistinguishable => "indistinguishable",
            Error::ResolutionExhausted(_) => "resolution_exhausted",
            Error::FitDegenerate(_) => "fit_degenerate",
            Error::Discretization(_) => "discretization",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 for bad input, 4 for exhausted resolution,
    /// 3 for any other numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Spec(_) | Error::Domain(_) | Error::OutOfRange(_) | Error::InsufficientOverlap(_) | Error::Io(_) => 2,
            Error::ResolutionExhausted(_) => 4,
            _ => 3,
        }
    }
}
