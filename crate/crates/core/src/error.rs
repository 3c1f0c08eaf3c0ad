use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed weight archive or other on-disk structure. `name` is the
    /// offending tensor (or section) so load failures are attributable.
    #[error("format error in `{name}`: {reason}")]
    Format { name: String, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A pipeline stage failed; carries the stage name and the cause.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
