use std::fmt;

use covfuse::Error;

/// Process outcome classes with stable exit codes.
#[derive(Debug)]
pub enum Failure {
    Runtime(String),
    Config(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Runtime(m) => write!(f, "error: {m}"),
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Schema(_) => Failure::Config(e.to_string()),
            Error::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}
