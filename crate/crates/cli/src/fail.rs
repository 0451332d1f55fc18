use std::fmt;

use intentgate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Refused,
}

/// A failed command: one machine-parsable line and an exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { kind: Kind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { kind: Kind::Data, message: message.into() }
    }

    pub fn refused(message: impl Into<String>) -> Self {
        Failure { kind: Kind::Refused, message: message.into() }
    }

    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Refused => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Refused => "refused",
        };
        let flat = self.message.replace(['\n', '\r'], " ");
        write!(f, "error\tcode={}\tkind={kind}\t{flat}", self.code())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::TooFewVariants { .. } => Failure::config(e.to_string()),
            Error::SplitMismatch { .. } => Failure::refused(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}
