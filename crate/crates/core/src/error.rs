use thiserror::Error;

/// Errors raised by signal handling, fitting and model evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-finite value in channel {channel} at sample k={sample}")]
    NonFinite { channel: usize, sample: usize },

    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),

    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unstable pole {0} (real part must be strictly negative)")]
    UnstablePole(String),

    #[error("pole {0} has no exact conjugate partner")]
    MissingConjugate(String),

    #[error("duplicate pole {0}")]
    DuplicatePole(String),

    #[error("pair-structure mismatch: {0}")]
    PairStructure(String),

    #[error("underdetermined system: {rows} rows for {unknowns} unknowns")]
    Underdetermined { rows: usize, unknowns: usize },

    #[error("degenerate regressor: numerical rank {rank} of {unknowns} unknowns (condition estimate {condition:.3e})")]
    DegenerateRegressor {
        rank: usize,
        unknowns: usize,
        condition: f64,
    },

    #[error("denominator degenerate: |d0| = {d0:.3e} relative to |d| = {norm:.3e}")]
    DenominatorDegenerate { d0: f64, norm: f64 },

    #[error("singular state matrix")]
    SingularMatrix,

    #[error("evaluation point {0} coincides with a pole")]
    AtPole(String),

    #[error("evaluation at s = 0")]
    AtOrigin,

    #[error("empty set")]
    EmptySet,

    #[error("reference signal is identically zero")]
    ZeroReference,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("phase noise requested but magnitude channel has zero mean")]
    ZeroMeanMagnitude,
}

pub type Result<T> = std::result::Result<T, Error>;
