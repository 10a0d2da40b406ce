use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure at {stage}: {detail}")]
    Numeric { stage: String, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn numeric(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    /// Prefix the stage of a numeric failure with extra context (e.g. the epoch).
    pub fn in_context(self, ctx: &str) -> Self {
        match self {
            Error::Numeric { stage, detail } => Error::Numeric {
                stage: format!("{ctx}/{stage}"),
                detail,
            },
            other => other,
        }
    }
}
