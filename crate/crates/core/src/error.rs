use thiserror::Error;

/// An argument outside an operation's domain.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid argument `{name}`: {reason}")]
pub struct InvalidArgument {
    pub name: &'static str,
    pub reason: &'static str,
}

impl InvalidArgument {
    pub const fn new(name: &'static str, reason: &'static str) -> Self {
        Self { name, reason }
    }
}

/// A scenario field that failed validation. `field` is a dotted path such as
/// `obstacles[2].radius`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

/// Errors that terminate a simulation run.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    InvalidArgument(#[from] InvalidArgument),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure at slot {slot}: {source}")]
    Solver {
        slot: usize,
        #[source]
        source: crate::controller::SolverError,
    },
}
