use std::fmt;

use rank_denoise::Error;

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: the configuration or an override is invalid.
    Config(String),
    /// Exit 2: reading or writing files failed, or an input file is malformed.
    Io(String),
    /// Exit 3: a checkpoint or report the command depends on is absent.
    Missing(String),
    /// Exit 4: training produced a non-finite loss.
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
            Failure::Missing(_) => 3,
            Failure::Diverged(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Missing(m) => write!(f, "missing artifact: {m}"),
            Failure::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidFraction(_) => Failure::Config(e.to_string()),
            Error::Divergence(m) => Failure::Diverged(m),
            other => Failure::Io(other.to_string()),
        }
    }
}
