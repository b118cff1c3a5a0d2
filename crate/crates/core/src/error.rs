use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid support for profile {name}: {reason}")]
    InvalidSupport { name: String, reason: String },
    #[error("invalid resolution: N = {0} (need at least 64)")]
    InvalidResolution(usize),
    #[error("modified operator needs Re z > 0, got z = {re} + {im}i")]
    BranchCut { re: f64, im: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cutoff overlaps the trapped set at x = {0}")]
    InvalidCutoff(f64),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("step size rejected: invariant drift {drift:e} exceeds budget {budget:e}")]
    StepRejected { drift: f64, budget: f64 },
    #[error("orbit is not closed: {0}")]
    NonClosedOrbit(String),
    #[error("degenerate orbit (Lyapunov exponent {0}) is unsupported")]
    UnsupportedDegenerate(f64),
    #[error("empty sample set")]
    EmptySample,
    #[error("time step violates stability: {0}")]
    Scheme(String),
    #[error("energy trace is not monotone at index {0}")]
    NonMonotone(usize),
    #[error("regularity insufficient: k = {k} must exceed N + 1 = {bound}")]
    RegularityInsufficient { k: u32, bound: f64 },
    #[error("alpha fit missing")]
    MissingFit,
    #[error("unknown preset: {0}")]
    UnknownPreset(String),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
