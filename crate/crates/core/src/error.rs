use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug)]
pub enum Error {
    /// A caller supplied an argument outside the operation's domain.
    InvalidArgument(String),
    /// Graph construction or analysis failed (e.g. disconnected graph).
    Graph(String),
    /// No path between two nodes.
    Unreachable { src: usize, dst: usize },
    /// A policy returned a node that is not a Fog node.
    InvalidPlacement { node: usize },
    /// Tensor or vector shapes disagree.
    Shape { expected: usize, got: usize },
    /// A network parameter became NaN or infinite.
    NonFinite(&'static str),
    /// Replay buffer holds fewer transitions than requested.
    Underfilled { size: usize, needed: usize },
    /// A workload lacks a timestamp needed for a metric.
    MissingTimestamp { uid: u64, phase: &'static str },
    /// Configuration violations, reported together.
    Config(Vec<String>),
    /// Malformed checkpoint or topology file.
    Format(String),
    NotImplemented(&'static str),
    Io { path: PathBuf, source: io::Error },
    Csv(csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Graph(msg) => write!(f, "graph error: {msg}"),
            Error::Unreachable { src, dst } => write!(f, "node {dst} is unreachable from {src}"),
            Error::InvalidPlacement { node } => {
                write!(f, "policy placed a workload on non-Fog node {node}")
            }
            Error::Shape { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Underfilled { size, needed } => {
                write!(f, "replay buffer holds {size} transitions, {needed} needed")
            }
            Error::MissingTimestamp { uid, phase } => {
                write!(f, "workload {uid} has no {phase} timestamp")
            }
            Error::Config(problems) => {
                write!(f, "invalid configuration: {}", problems.join("; "))
            }
            Error::Format(msg) => write!(f, "malformed file: {msg}"),
            Error::NotImplemented(what) => write!(f, "{what} is not implemented"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Csv(e) => write!(f, "csv: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Csv(e) => Some(e),
            _ => None,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}
