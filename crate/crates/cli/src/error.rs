use std::fmt;

/// Failures mapped onto the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or values. Exit 2.
    Validation(String),
    /// The integration or training run left the finite region. Exit 3.
    Divergence(String),
    /// Reading a config or writing an output failed. Exit 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Divergence(m) => write!(f, "numeric divergence: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<phinet_core::Error> for CliError {
    fn from(e: phinet_core::Error) -> Self {
        match e {
            phinet_core::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
