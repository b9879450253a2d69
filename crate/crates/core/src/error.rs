use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config syntax error on line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("unknown config key `{key}` on line {line}")]
    ConfigUnknownKey { key: String, line: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("malformed {what} on line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    InvalidToken { id: u32, vocab_size: usize },

    #[error("reference model bridge unavailable: {0}")]
    BridgeUnavailable(String),
    #[error("reference model bridge protocol error: {0}")]
    BridgeProtocol(String),
    #[error("reference model bridge dimension mismatch: expected {expected}, got {found}")]
    BridgeDimension { expected: usize, found: usize },

    #[error("rejecting the last candidate (rank {rank} of {size}) violates the fallback rule")]
    FallbackViolation { rank: usize, size: usize },
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("no transition out of a terminal state")]
    TerminalState,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("forward cache does not match the network it is used with")]
    StaleCache,

    #[error("reference distribution has zero mass on a candidate the policy selects")]
    ZeroSupport,
    #[error("terminal micro-step requires a terminal composite reward")]
    MissingTerminalReward,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("replay buffer is empty")]
    BufferEmpty,
    #[error("training aborted: {0}")]
    TrainAborted(String),

    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("no comparisons to aggregate")]
    EmptyComparison,
    #[error("no input to analyze")]
    EmptyInput,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            message: message.into(),
        }
    }
}
