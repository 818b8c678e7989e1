use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a physical formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or invalid configuration (species data, sequences, grids).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data. `line` is 1-based when known.
    #[error("ingestion error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Ingestion { line: Option<usize>, message: String },

    #[error("integrator failure in velocity class {class} at t = {time:e} s (step {step:e} s underflowed)")]
    Integration { class: usize, time: f64, step: f64 },

    /// Non-finite model output or a failed numerical procedure.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn ingestion(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            line,
            message: msg.into(),
        }
    }
}
