use std::fmt;

use corrnet::clustering::ClusterError;
use corrnet::corrdist::CorrDistError;
use corrnet::marketdata::MarketDataError;
use corrnet::portfolio::PortfolioError;
use corrnet::splitweights::SplitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 1,
            ErrorKind::Io => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

/// A failure in one named stage of the pipeline.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            kind,
            stage: stage.into(),
            message: message.to_string(),
        }
    }

    pub fn validation(stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Validation, stage, message)
    }

    pub fn io(stage: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Io, stage, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

/// Maps a library error onto an exit-code category.
pub trait Classify: fmt::Display {
    fn kind(&self) -> ErrorKind;
}

fn csv_kind(e: &csv::Error) -> ErrorKind {
    if e.is_io_error() {
        ErrorKind::Io
    } else {
        ErrorKind::Validation
    }
}

impl Classify for MarketDataError {
    fn kind(&self) -> ErrorKind {
        match self {
            MarketDataError::Csv(e) => csv_kind(e),
            MarketDataError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

impl Classify for CorrDistError {
    fn kind(&self) -> ErrorKind {
        match self {
            CorrDistError::Csv(e) => csv_kind(e),
            CorrDistError::Io(_) => ErrorKind::Io,
            CorrDistError::InvalidMatrix(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}

impl Classify for SplitError {
    fn kind(&self) -> ErrorKind {
        match self {
            SplitError::NotConverged { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}

impl Classify for ClusterError {
    fn kind(&self) -> ErrorKind {
        match self {
            ClusterError::Csv(e) => csv_kind(e),
            ClusterError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

impl Classify for PortfolioError {
    fn kind(&self) -> ErrorKind {
        match self {
            PortfolioError::Csv(e) => csv_kind(e),
            PortfolioError::Io(_) => ErrorKind::Io,
            PortfolioError::Iteration { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }
}

impl Classify for std::io::Error {
    fn kind(&self) -> ErrorKind {
        ErrorKind::Io
    }
}

impl Classify for csv::Error {
    fn kind(&self) -> ErrorKind {
        csv_kind(self)
    }
}

impl Classify for serde_json::Error {
    fn kind(&self) -> ErrorKind {
        if self.is_io() {
            ErrorKind::Io
        } else {
            ErrorKind::Validation
        }
    }
}

pub trait Stage<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T, E: Classify> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| CliError::new(e.kind(), name, &e))
    }
}
