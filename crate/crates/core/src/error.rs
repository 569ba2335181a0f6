//! Error type shared by all estimation routines.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FsrError {
    #[error("degenerate domain [{0}, {1}]: left endpoint must be strictly smaller")]
    DegenerateDomain(f64, f64),
    #[error("argument {arg} out of range: {msg}")]
    OutOfRange { arg: &'static str, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point t={0} lies outside the basis domain [{1}, {2}]")]
    OutsideDomain(f64, f64, f64),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("empty kernel neighborhood: all weights vanish for the requested bandwidth")]
    EmptyNeighborhood,
    #[error("no admissible candidate direction: every seed vector has theta(t0) <= 0")]
    EmptyThetaGrid,
    #[error("no feasible tuning candidate: {0}")]
    AllCandidatesInfeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, FsrError>;
