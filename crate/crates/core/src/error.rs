use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stream source")]
    EmptyStreamSource,

    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("query vector is not unit norm (norm {norm})")]
    NonUnitVector { norm: f64 },

    #[error("premature eviction: store holds {len} of {capacity} entries")]
    PrematureEviction { len: usize, capacity: String },

    #[error("unknown entry {0}")]
    UnknownEntry(u64),

    #[error("touch time {time} precedes last match time {last}")]
    TimeRegression { time: u64, last: u64 },

    #[error("causality violation: arrival {got} after {last}")]
    CausalityViolation { last: u64, got: u64 },

    #[error("no anchors")]
    NoAnchors,

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("infeasible generation: {0}")]
    Infeasible(String),

    #[error("no grid point meets fpr budget {budget}; best infeasible tau_sem={tau_sem} tau_int={tau_int} fpr={fpr} recall={recall}")]
    NoFeasibleThreshold {
        budget: f64,
        tau_sem: f64,
        tau_int: f64,
        fpr: f64,
        recall: f64,
    },

    #[error("length mismatch: {verdicts} verdicts for {requests} requests")]
    LengthMismatch { verdicts: usize, requests: usize },

    #[error("too few variants: need {needed}, got {got}")]
    TooFewVariants { needed: usize, got: usize },

    #[error("non-finite parameter after update")]
    NonFinite,

    #[error("split mismatch: file is {found}, expected {expected}")]
    SplitMismatch { found: String, expected: String },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
