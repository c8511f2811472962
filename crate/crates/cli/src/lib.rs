//! Command-line front end for `l3o-core`: CSV ingestion, `key=value`
//! configuration, reports in JSON/CSV/text and a parallel Monte Carlo driver.

pub mod args;
pub mod commands;
pub mod config;
pub mod input;
pub mod mc;
pub mod report;

use l3o_core::Error as CoreError;

/// Errors surfaced by the tool, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Input file or option violates the expected schema.
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Rank(String),
    #[error("{0}")]
    Design(String),
    /// Leave-out Gram matrices are singular and `--conservative` was not given.
    #[error("{0}")]
    Feasibility(String),
    #[error("{0}")]
    Other(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Rank(_) => 3,
            CliError::Design(_) => 4,
            CliError::Feasibility(_) => 5,
            CliError::Other(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Schema(_) | CoreError::MissingCovariates | CoreError::InvalidArgument(_) => CliError::Schema(msg),
            CoreError::RankDeficient(_)
            | CoreError::LeverageOne(_)
            | CoreError::SiveDiagonalUnsolvable
            | CoreError::DegenerateFirstStage => CliError::Rank(msg),
            CoreError::InvalidDesign(_) => CliError::Design(msg),
            CoreError::TripleSingular { .. } => {
                CliError::Feasibility(format!("{msg}; rerun with --conservative to drop these terms"))
            }
            CoreError::GridTooCoarse | CoreError::NotPsd => CliError::Other(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
