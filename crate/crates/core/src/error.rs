use thiserror::Error;

/// Failure modes shared by every module of the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
    #[error("cross-section singular at g = 0 with b = {b}; caller must cut off")]
    Singularity { b: f64 },
    #[error("assembly accuracy: {0}")]
    AssemblyAccuracy(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("step size: {0}")]
    StepSize(String),
    #[error("insufficient frequency resolution: {0}")]
    Resolution(String),
    #[error("expansion mismatch: {0}")]
    ExpansionMismatch(String),
    #[error("data too large for contraction: {0}")]
    DataTooLarge(String),
    #[error("no feasible constants: {0}")]
    Infeasible(String),
    #[error("balance law violated: {0}")]
    BalanceLaw(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of a numerical budget, as opposed to bad input.
    pub fn is_budget_failure(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_) | Error::Config(_) | Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
