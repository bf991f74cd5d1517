use std::fmt;

/// Classification of every failure the engine can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ErrorKind {
    ParseError,
    CompileError,
    DatasetNotFound,
    DuplicateName,
    PrimaryKeyViolation,
    ActiveFunctionOnPlainDataset,
    ChannelOverrun,
    BrokerUnreachable,
    MalformedRecord,
    BrokerNotFound,
    ExpectationFailed,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::ParseError => "ParseError",
            ErrorKind::CompileError => "CompileError",
            ErrorKind::DatasetNotFound => "DatasetNotFound",
            ErrorKind::DuplicateName => "DuplicateName",
            ErrorKind::PrimaryKeyViolation => "PrimaryKeyViolation",
            ErrorKind::ActiveFunctionOnPlainDataset => "ActiveFunctionOnPlainDataset",
            ErrorKind::ChannelOverrun => "ChannelOverrun",
            ErrorKind::BrokerUnreachable => "BrokerUnreachable",
            ErrorKind::MalformedRecord => "MalformedRecord",
            ErrorKind::BrokerNotFound => "BrokerNotFound",
            ErrorKind::ExpectationFailed => "ExpectationFailed",
            ErrorKind::Io => "Io",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1-based source position inside a statement file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Location {
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct EngineError {
    pub kind: ErrorKind,
    pub message: String,
    pub location: Option<Location>,
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some(loc) => write!(f, "{} at line {}, column {}: {}", self.kind, loc.line, loc.column, self.message),
            None => write!(f, "{}: {}", self.kind, self.message),
        }
    }
}

impl EngineError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        EngineError { kind, message: message.into(), location: None }
    }

    pub fn at(mut self, location: Location) -> Self {
        if self.location.is_none() {
            self.location = Some(location);
        }
        self
    }

    pub fn parse(message: impl Into<String>, location: Location) -> Self {
        EngineError::new(ErrorKind::ParseError, message).at(location)
    }

    pub fn compile(message: impl Into<String>) -> Self {
        EngineError::new(ErrorKind::CompileError, message)
    }

    pub fn dataset_not_found(name: &str) -> Self {
        EngineError::new(ErrorKind::DatasetNotFound, format!("dataset `{name}` does not exist"))
    }

    pub fn duplicate(what: &str, name: &str) -> Self {
        EngineError::new(ErrorKind::DuplicateName, format!("{what} `{name}` already exists"))
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        EngineError::new(ErrorKind::MalformedRecord, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        EngineError::new(ErrorKind::Io, message)
    }
}

impl From<std::io::Error> for EngineError {
    fn from(err: std::io::Error) -> Self {
        EngineError::io(err.to_string())
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
