use thiserror::Error;

/// Errors produced anywhere in the restoration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("duplicate bus id {0}")]
    DuplicateBus(i64),

    #[error("{element} references nonexistent bus {bus}")]
    DanglingBus { element: String, bus: i64 },

    #[error("network has no slack bus")]
    NoSlack,

    #[error("network has more than one slack bus ({0} and {1})")]
    MultipleSlack(i64, i64),

    #[error("network is disconnected: bus {0} is not reachable from the slack bus")]
    Disconnected(i64),

    #[error("invalid network data: {0}")]
    InvalidData(String),

    #[error("invalid measurement reference: {0}")]
    UnknownReference(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e})")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("singular jacobian in power flow")]
    SingularJacobian,

    #[error("unobservable configuration: normal matrix is singular along {0}")]
    Unobservable(String),

    #[error("missing required measurement: {0}")]
    MissingMeasurement(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),

    #[error("optimal power flow failed: {0}")]
    OpfFailed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too many failed records: {failed} of {total} ({first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("network hash mismatch: file has {found}, case has {expected}")]
    HashMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::DuplicateBus(_)
            | Error::DanglingBus { .. }
            | Error::NoSlack
            | Error::MultipleSlack(..)
            | Error::Disconnected(_)
            | Error::InvalidData(_) => "network",
            Error::UnknownReference(_) | Error::Dimension { .. } | Error::MissingMeasurement(_) => {
                "measurement"
            }
            Error::NonConvergence { .. } | Error::SingularJacobian => "powerflow",
            Error::OpfFailed(_) => "opf",
            Error::Unobservable(_) => "unobservable",
            Error::Infeasible | Error::Unbounded | Error::IterationLimit(_) => "lp",
            Error::InvalidArgument(_) => "argument",
            Error::TooManyFailures { .. } => "training",
            Error::Format { .. } | Error::HashMismatch { .. } | Error::Json(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
