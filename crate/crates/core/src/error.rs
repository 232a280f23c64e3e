use thiserror::Error;

/// Errors surfaced by the model, the controller and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage} out of range 1..={max}")]
    StageOutOfRange { stage: usize, max: usize },

    #[error("unknown unit conversion {from} -> {to}")]
    UnknownUnit { from: String, to: String },

    #[error("window [{start}, {end}) outside horizon {horizon}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        horizon: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("lp solver: {0}")]
    Lp(String),

    #[error("invariant violated at slot {slot}: {detail}")]
    Invariant { slot: usize, detail: String },

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors that originate in the user's scenario description.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::UnknownUnit { .. } | Error::StageOutOfRange { .. } => true,
            Error::Trial { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Trial { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
