use std::fmt;

use annobert_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Runtime,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Runtime => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Usage,
            message: msg.to_string(),
        }
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Runtime,
            message: msg.to_string(),
        }
    }

    /// An error raised while reading inputs: data unless it is a config error.
    pub fn data(e: Error) -> Self {
        let kind = if matches!(e, Error::Config(_)) { Kind::Usage } else { Kind::Data };
        CliError {
            kind,
            message: e.to_string(),
        }
    }

    pub fn from_core(e: Error) -> Self {
        let kind = match &e {
            Error::Config(_) => Kind::Usage,
            Error::Parse { .. }
            | Error::Duplicate { .. }
            | Error::InvalidRecord(_)
            | Error::EmptyDataset(_)
            | Error::InsufficientClass { .. }
            | Error::UnknownAnnotator(_)
            | Error::NoOverlap(..)
            | Error::EmptySubset(_)
            | Error::AnalysisUnavailable(_) => Kind::Data,
            _ => Kind::Runtime,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }

    pub fn context(mut self, ctx: impl fmt::Display) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime(e)
    }
}
