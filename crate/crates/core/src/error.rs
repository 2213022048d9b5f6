use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value failed validation.
    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    /// Checkpoint file is corrupt, truncated or from an unknown version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Requested operation is not available for the selected component.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The environment received a non-finite action or reached an invalid state.
    #[error("environment fault: {0}")]
    EnvFault(String),

    /// Evaluation input was malformed (e.g. a truncated episode trace).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
