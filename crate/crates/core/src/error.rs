use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {cause}")]
    Parse { line: usize, cause: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid demand history: {0}")]
    InvalidHistory(String),

    #[error("infeasible existing infrastructure at supply point {index}: {scs} SCS + {fcs} FCS exceeds {slots} parking slots")]
    InfeasibleInfrastructure {
        index: usize,
        scs: u32,
        fcs: u32,
        slots: u32,
    },

    #[error("invalid infrastructure: {0}")]
    InvalidInfrastructure(String),

    #[error("insufficient history: {have} points, need at least {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("infeasible instance: total demand {demand} exceeds maximum buildable capacity {capacity}")]
    InfeasibleInstance { demand: f64, capacity: f64 },

    #[error("infeasible relaxation: {0}")]
    InfeasibleRelaxation(String),

    #[error("counts infeasible: capacity {capacity} is below total demand {demand}")]
    CountsInfeasible { demand: f64, capacity: f64 },

    #[error("no incumbent found within the time limit")]
    NoIncumbent,

    #[error("year {year}: {source}")]
    Year {
        year: i32,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, cause: impl Into<String>) -> Self {
        Error::Parse {
            line,
            cause: cause.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
