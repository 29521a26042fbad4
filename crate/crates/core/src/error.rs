use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("network is disconnected: {0}")]
    Disconnected(String),

    /// Taking the branch out of service splits the network into islands.
    #[error("islanding: removing branch {branch} disconnects the network")]
    Islanding { branch: usize },

    #[error("unknown branch id {0}")]
    UnknownBranch(usize),

    #[error("singular Newton Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    /// B' could not be factorized or is too ill-conditioned to trust.
    #[error("reduced susceptance matrix is singular or ill-conditioned (pivot {pivot:?}, condition estimate {condition_estimate:e})")]
    SingularMatrix { pivot: Option<usize>, condition_estimate: f64 },

    #[error("AC power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:e})")]
    NotConverged { iterations: usize, max_mismatch: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("case checksum mismatch: expected {expected}, found {found}")]
    ChecksumMismatch { expected: String, found: String },

    #[error("scenario rejection rate too high: {rejected} of {attempts} draws failed to converge")]
    RejectionRate { rejected: usize, attempts: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
