use std::fmt;

/// Failure of a CLI verb, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or an invalid scenario file. Exit 2.
    Usage(String),
    /// The simulation or file output failed. Exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<wncs::Error> for CliError {
    fn from(e: wncs::Error) -> Self {
        match e {
            wncs::Error::Config(c) => CliError::Usage(c.to_string()),
            wncs::Error::InvalidArgument(a) => CliError::Usage(a.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
