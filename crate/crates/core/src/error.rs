use std::path::PathBuf;

use crate::network::Level;

/// Broad classes of failure, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Infeasible,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate edge ({origin}, {dest}) at {path}:{line}")]
    DuplicateEdge {
        path: PathBuf,
        line: u64,
        origin: String,
        dest: String,
    },

    #[error("edge ({origin}, {dest}) has zero weight")]
    ZeroWeight { origin: String, dest: String },

    #[error("zone {child} mapped to both {first} and {second}")]
    ConflictingParent {
        child: String,
        first: String,
        second: String,
    },

    #[error("zone {code} at level {level} has no parent in the hierarchy")]
    UnmappedZone { code: String, level: Level },

    #[error("level mismatch: {left} vs {right}")]
    LevelMismatch { left: String, right: String },

    #[error("pair ({origin}, {dest}) not present in network")]
    MissingPair { origin: String, dest: String },

    #[error("origin {0} has no population entry")]
    MissingPopulation(String),

    #[error("weight distribution has no non-empty bins")]
    EmptyDistribution,

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Infeasible(_) | Error::EmptyDistribution => ErrorKind::Infeasible,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
