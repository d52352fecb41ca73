use thiserror::Error;

/// Errors raised by the estimation, linear-algebra and learning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query budget exceeded: cap {cap}, requested {requested} with {used} already spent")]
    BudgetExceeded { cap: u64, used: u64, requested: u64 },

    #[error("oracle ledger is frozen; queries are not allowed in this stage")]
    LedgerFrozen,

    #[error("matrix is rank deficient: smallest eigenvalue {lambda_min:e} is below floor {floor:e}")]
    RankDeficient { lambda_min: f64, floor: f64 },

    #[error("perturbation too large: smallest eigenvalue {lambda_min:e} is below the guaranteed floor {floor:e}")]
    PerturbationTooLarge { lambda_min: f64, floor: f64 },

    #[error("certification failed: {0}")]
    CertificationFailed(String),

    #[error("cover too large: estimated ln|cover| = {log_size:.3} exceeds ln(cap) = {log_cap:.3}")]
    CoverTooLarge { log_size: f64, log_cap: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
