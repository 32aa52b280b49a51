use alloc::string::String;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("index {index} out of range for {what} (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("unsupported shape: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("level {requested} exceeds maximum level {max}")]
    Level { requested: usize, max: usize },
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("degenerate game: {0}")]
    DegenerateGame(&'static str),
    #[error("u_r * u_c = {0} is not negative; no quadratic Lyapunov function")]
    NotLyapunovCandidate(f64),
    #[error("closed-form Lyapunov derivative is only available up to level 3 (got {0})")]
    UnsupportedLevel(usize),
    #[error("integration diverged at t = {0}")]
    IntegrationDiverged(f64),
    #[error("non-finite {loss} loss at step {step}: {diagnostics}")]
    NonFiniteLoss {
        loss: &'static str,
        step: usize,
        diagnostics: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
