use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input shapes or values violate the dataset contract.
    Schema(String),
    /// The column space of `Q = (Z, W)` is rank deficient; carries the
    /// columns involved in the detected dependency.
    RankDeficient(Vec<usize>),
    /// An observation has leverage one, so leave-one-out quantities are undefined.
    LeverageOne(usize),
    /// The diagonal system defining SIVE's `D_BN` is singular.
    SiveDiagonalUnsolvable,
    /// A weighting scheme needs covariates that were not supplied.
    MissingCovariates,
    /// First-stage cross moment is (numerically) zero.
    DegenerateFirstStage,
    /// A leave-three-out (or leave-two-out) Gram matrix is singular or nearly so.
    TripleSingular { i: usize, j: usize, k: usize },
    /// Simulation design parameters are out of range.
    InvalidDesign(String),
    /// Grid inversion could not bracket the acceptance region.
    GridTooCoarse,
    /// A covariance input is not positive semidefinite.
    NotPsd,
    /// Invalid argument to an operation.
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Schema(m) => write!(f, "schema error: {m}"),
            Error::RankDeficient(cols) => {
                write!(f, "instrument/covariate design is rank deficient (columns {cols:?})")
            }
            Error::LeverageOne(i) => write!(f, "observation {i} has leverage one"),
            Error::SiveDiagonalUnsolvable => write!(f, "SIVE diagonal system is singular"),
            Error::MissingCovariates => write!(f, "weighting scheme requires covariates"),
            Error::DegenerateFirstStage => write!(f, "degenerate first stage"),
            Error::TripleSingular { i, j, k } => {
                write!(f, "leave-out Gram matrix singular for rows ({i}, {j}, {k})")
            }
            Error::InvalidDesign(m) => write!(f, "invalid design: {m}"),
            Error::GridTooCoarse => write!(f, "grid too coarse to bracket the confidence set"),
            Error::NotPsd => write!(f, "matrix is not positive semidefinite"),
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
