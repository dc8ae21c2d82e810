use std::path::PathBuf;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, ranges, or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes (or mask shapes) that do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN/Inf encountered, or a numerically undefined request.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A forward record used after the model parameters changed.
    #[error("stale forward record: recorded at parameter version {recorded}, model is at {current}")]
    StaleRecord { recorded: u64, current: u64 },

    /// Evaluation requested on samples without ground-truth masks.
    #[error("ground truth unavailable for sample {0}")]
    MissingGroundTruth(String),

    #[error("dataset error in {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line tool: 2 for configuration
    /// problems, 3 for everything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
