//! Error type shared by every module of the crate.

use thiserror::Error;

/// Which label field of a record an operation was asked to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Clean,
    Noisy,
}

impl std::fmt::Display for LabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelKind::Clean => write!(f, "clean"),
            LabelKind::Noisy => write!(f, "noisy"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("record has no {0} label")]
    MissingLabel(LabelKind),

    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error(
        "calibration set of size {n} cannot produce the ceil((n+1)(1-alpha)) = {k} quantile"
    )]
    InsufficientCalibration { n: usize, k: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("value {value} outside the grid span [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("noise standard deviation must be nonnegative, got {0}")]
    NegativeSigma(f64),

    #[error("every column is masked; the deconvolution has no data to fit")]
    AllMasked,

    #[error(
        "row {row}: projected gradient stopped at {iters} iterations with relative \
         objective change {rel_change:.3e} still above 100x tolerance"
    )]
    NonConvergence {
        row: usize,
        iters: usize,
        rel_change: f64,
    },

    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
