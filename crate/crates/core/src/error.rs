use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("coordinate {index} = {value} outside [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("insufficient data: need at least {needed} distinct points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("cholesky factorization failed after {attempts} jitter attempts")]
    Cholesky { attempts: usize },

    #[error("zero-norm latent vector for task {task}")]
    DegenerateLatent { task: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("archive format version {found} is not supported (expected {expected}); migration required")]
    Migration { found: u32, expected: u32 },

    #[error("checksum mismatch for archive record {id}")]
    Checksum { id: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Process exit status: 2 for bad input or configuration, 1 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Config { .. }
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::OutOfBounds { .. } => 2,
            _ => 1,
        }
    }
}
