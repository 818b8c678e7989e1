use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with its own process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Unreadable or invalid configuration (exit 2).
    Config,
    /// Malformed measurement data (exit 3).
    Ingestion,
    /// The model or an optimizer failed (exit 4).
    Numeric,
    /// Outputs could not be written (exit 1).
    Output,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn ingestion(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Ingestion,
            message: message.into(),
        }
    }

    pub fn output(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Output,
            message: message.into(),
        }
    }

    /// Prefixes the message with `context`, keeping the kind.
    pub fn context(self, context: impl fmt::Display) -> Self {
        CliError {
            kind: self.kind,
            message: format!("{context}: {}", self.message),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.kind {
            Kind::Config => 2,
            Kind::Ingestion => 3,
            Kind::Numeric => 4,
            Kind::Output => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Kind::Config => "configuration error",
            Kind::Ingestion => "ingestion error",
            Kind::Numeric => "numeric failure",
            Kind::Output => "output error",
        };
        write!(f, "{label}: {}", self.message)
    }
}

impl From<vsp_core::Error> for CliError {
    fn from(e: vsp_core::Error) -> Self {
        use vsp_core::Error as E;
        let kind = match &e {
            E::Config(_) | E::Domain(_) => Kind::Config,
            E::Ingestion { .. } => Kind::Ingestion,
            E::Integration { .. } | E::Numeric(_) => Kind::Numeric,
            E::Io(_) => Kind::Output,
        };
        // The core messages already name their category.
        let message = match e {
            E::Config(m) | E::Domain(m) | E::Numeric(m) => m,
            E::Ingestion { line: Some(l), message } => format!("line {l}: {message}"),
            E::Ingestion { line: None, message } => message,
            e => e.to_string(),
        };
        CliError { kind, message }
    }
}
