use thiserror::Error;

/// Crate-wide error type.
///
/// Variants split into two exit classes: configuration/input problems
/// (exit code 1 from the CLI) and runtime estimation failures (exit code 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("fit error ({context}): {message}")]
    Fit { context: String, message: String },

    #[error("evaluation error: non-finite value in {0}")]
    NonFinite(String),

    #[error("root-finding failure: {0}")]
    RootFind(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code class: 1 for input/config validation, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Sizing(_)
            | Error::Contract(_)
            | Error::Io(_) => 1,
            Error::Fit { .. }
            | Error::NonFinite(_)
            | Error::RootFind(_)
            | Error::Inference(_)
            | Error::Experiment(_) => 2,
        }
    }

    /// Short machine-readable kind tag for the structured error object.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Sizing(_) => "sizing",
            Error::Contract(_) => "contract",
            Error::Fit { .. } => "fit",
            Error::NonFinite(_) => "non_finite",
            Error::RootFind(_) => "root_find",
            Error::Inference(_) => "inference",
            Error::Experiment(_) => "experiment",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
