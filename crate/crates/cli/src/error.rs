use asf_core::AsfError;
use thiserror::Error;

/// Problems reading a CSV dataset.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("missing required column '{0}'")]
    MissingColumn(String),
    #[error("ambiguous column role '{role}': {columns:?}")]
    AmbiguousColumn { role: String, columns: Vec<String> },
    #[error("no complete rows remain after dropping rows with missing values")]
    EmptyAfterFiltering,
    #[error("cannot parse '{value}' in row {row}, column '{column}'")]
    UnparsableCell { row: usize, column: String, value: String },
    #[error("cannot read '{path}': {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Ingest(#[from] IngestError),
    #[error("estimation error: {0}")]
    Estimation(#[from] AsfError),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    /// Process exit status: 2 for invalid input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Ingest(_) => 2,
            CliError::Estimation(_) | CliError::Output(_) => 1,
        }
    }
}
