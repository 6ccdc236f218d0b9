use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Faults raised anywhere in the stack.
///
/// Expected negative outcomes (an unreachable goal, an unparsed utterance, an
/// invisible marker) are ordinary values of their operation's return type and
/// never appear here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid map file {path}: {reason}")]
    MapFormat { path: PathBuf, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown object id `{0}`")]
    UnknownObject(String),
    #[error("robot start cell is untraversable (in collision)")]
    StartInCollision,
    #[error("point outside the grid")]
    OutOfBounds,
    #[error("non-finite value in cost term `{term}`")]
    NonFiniteCost { term: &'static str },
    #[error("invalid payload mass {0} kg")]
    InvalidMass(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
