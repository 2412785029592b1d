//! Pipeline error type and process exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or invalid configuration. `line` is set when the problem
    /// can be pinned to a config-file line.
    #[error("config error{}: {message}", fmt_line(.line))]
    Config { message: String, line: Option<usize> },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A stage was invoked before its upstream artifact exists.
    #[error("missing artifact {path:?}: run stage {stage} first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_line(line: &Option<usize>) -> String {
    match line {
        Some(n) => format!(" (line {n})"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config { message: message.into(), line: None }
    }

    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config { message: message.into(), line: Some(line) }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    /// Process exit code for the CLI. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Data(_) | Error::Csv(_) | Error::Json(_) | Error::Metric(_) => 3,
            Error::Divergence(_) => 4,
            Error::MissingArtifact { .. } => 5,
            Error::Io(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
