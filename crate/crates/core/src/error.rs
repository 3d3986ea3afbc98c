use alloc::string::String;

use crate::data::Arm;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dataset contains no studies")]
    EmptyDataset,
    #[error("duplicate study id `{0}`")]
    DuplicateStudyId(String),
    #[error("study `{id}` has an empty {arm} arm")]
    EmptyArm { id: String, arm: Arm },
    #[error("study `{0}` has a negative count")]
    NegativeCount(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("{value} lies outside the support of {kernel}")]
    OutOfSupport { kernel: &'static str, value: f64 },
    #[error("{value} lies outside the domain of the {transform} transform")]
    DomainError { transform: &'static str, value: f64 },
    #[error("no study is usable after applying the zero-cell policy")]
    NoUsableStudies,
    #[error("every study has an infinite standard error")]
    DegenerateWeights,
    #[error("heterogeneity test needs at least two studies, got {0}")]
    InsufficientStudies(usize),
    #[error("every study has zero hypergeometric variance; no estimable effect")]
    AllZeroVariance,
    #[error("relative risk must be positive, got {0}")]
    NonPositiveRR(f64),
    #[error("population rate must lie in (0, 1), got {0}")]
    RateOutOfRange(f64),
    #[error("log density is not finite")]
    NonFiniteDensity,
    #[error("parameter vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("could not find a finite starting point: {0}")]
    GradientFailure(&'static str),
    #[error("chain {chain}: {divergent} of {draws} retained transitions diverged")]
    AllDivergent {
        chain: usize,
        divergent: usize,
        draws: usize,
    },
    #[error("not enough draws for this diagnostic")]
    InsufficientDraws,
    #[error("draws have zero variance")]
    ZeroVariance,
    #[error("simulation-based calibration needs at least 50 simulations, got {0}")]
    InsufficientSims(usize),
    #[error("plot has no rows")]
    EmptySpec,
    #[error("row `{0}` violates ci_low <= point <= ci_high")]
    InvalidRow(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
