use std::fmt;
use std::process::ExitCode;

use confgap::Error;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config or input files: exit 2.
    Usage(String),
    /// Numerical or I/O failure while running: exit 1.
    Runtime(String),
}

pub type CliResult<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NotPositiveDefinite
            | Error::ExtractionFailed { .. }
            | Error::NonFinitePayload(_)
            | Error::Io(_) => Failure::Runtime(msg),
            _ => Failure::Usage(msg),
        }
    }
}

/// Attaches a path or step to errors that stem from user input.
pub trait InputContext<T> {
    fn input(self, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> InputContext<T> for std::result::Result<T, E> {
    fn input(self, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure::Usage(format!("{what}: {e}")))
    }
}

/// Attaches context to errors raised while producing output.
pub trait OutputContext<T> {
    fn output(self, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> OutputContext<T> for std::result::Result<T, E> {
    fn output(self, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure::Runtime(format!("{what}: {e}")))
    }
}
