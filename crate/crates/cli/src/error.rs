use std::fmt;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or option combinations.
    Usage(String),
    /// Unreadable or invalid input data, or an output path that cannot be written.
    Data(String),
    /// A solver or model fit failed.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<selate::Error> for CliError {
    fn from(e: selate::Error) -> Self {
        match e {
            selate::Error::InvalidArgument(m) => CliError::Usage(m),
            selate::Error::Io(_) => CliError::Data(e.to_string()),
            e if e.is_data_error() => CliError::Data(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = Result<T, CliError>;
