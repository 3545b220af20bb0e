//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),

    #[error("kernel extent {kernel} exceeds input extent {input}")]
    KernelTooLarge { kernel: usize, input: usize },

    #[error("kernel extent {0} is not odd")]
    NonOddKernel(usize),

    #[error("pool size {e} does not divide spatial extent {extent}")]
    IndivisiblePoolSize { e: usize, extent: usize },

    #[error("pool indices inconsistent: {0}")]
    InconsistentIndices(String),

    #[error("batch norm needs a batch of at least 2 in training mode, got {0}")]
    DegenerateBatch(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("gradient tape not ready: {0}")]
    IncompleteTape(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("config error:\n{}", format_config_errors(.0))]
    Config(Vec<ConfigError>),

    #[error("i/o error: {0}")]
    Io(String),
}

/// One validation failure in an experiment config, tied to a source line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn format_config_errors(errors: &[ConfigError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
