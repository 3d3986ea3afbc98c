use std::path::PathBuf;

use medmeta_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line 1: header must start with `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },
    #[error("line {line}: `{value}` in column `{column}` is not an integer count")]
    NonIntegerCount {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: column `{column}` holds the negative count {value}")]
    NegativeCount {
        line: u64,
        column: &'static str,
        value: i64,
    },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 1 for usage and configuration errors, 2 for unreadable or invalid
    /// data, 3 when the sampler cannot produce usable draws.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                CoreError::InvalidParameter(_)
                | CoreError::RateOutOfRange(_)
                | CoreError::NonPositiveRR(_)
                | CoreError::InsufficientSims(_) => 1,
                CoreError::GradientFailure(_)
                | CoreError::AllDivergent { .. }
                | CoreError::InsufficientDraws
                | CoreError::ZeroVariance => 3,
                _ => 2,
            },
            _ => 2,
        }
    }
}
