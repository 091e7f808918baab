use thiserror::Error;

use crate::numerics::Vector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is rank deficient: numerical rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("matrix has full column rank ({cols}); no kernel vector exists")]
    FullRank { cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("solver did not converge after {iterations} iterations (KKT residual {kkt_residual:e})")]
    NotConverged { iterations: usize, kkt_residual: f64, last_iterate: Box<Vector> },

    #[error("input is not a Lasso minimizer: KKT residual {kkt_residual:e} exceeds tolerance")]
    NotOptimalInput { kkt_residual: f64 },

    #[error("problem too large for exhaustive enumeration: p = {p} > {limit}")]
    TooLarge { p: usize, limit: usize },

    #[error("{failures} of {replications} replications failed to converge (quota {quota})")]
    QuotaExceeded { failures: usize, replications: usize, quota: usize },
}
