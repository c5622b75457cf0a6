use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("rate {index} evaluated to {value} (must be finite and non-negative)")]
    NegativeRate { index: usize, value: f64 },

    #[error("event cap of {cap} exceeded")]
    EventCapExceeded { cap: usize },

    #[error("root finder failed to converge: {0}")]
    NoConvergence(String),

    #[error("disease is already subcritical (R0 = {0} <= 1)")]
    Subcritical(f64),

    #[error("population {n} too large for chain enumeration (max {max})")]
    PopulationTooLarge { n: usize, max: usize },

    #[error("recursion became numerically unstable at k = {k} (p_k = {value:e}); use high-precision mode")]
    NumericalInstability { k: usize, value: f64 },

    #[error("state left the invariant region at t = {time}: {detail}")]
    RegionViolation { time: f64, detail: String },

    #[error("unstable equilibrium: eigenvalue with real part {0} >= 0")]
    UnstableEquilibrium(f64),

    #[error("singular linear system")]
    Singular,

    #[error("control path does not match its dynamics at segment {segment} (mismatch {mismatch:e})")]
    FlowMismatch { segment: usize, mismatch: f64 },

    #[error("empty outcome set")]
    EmptyOutcomes,

    #[error("not implemented for this combination: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
