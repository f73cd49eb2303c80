use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Bytes one agent put on the channel in a budgeted exchange.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct AgentBytes {
    pub agent: String,
    pub bytes: usize,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed message: {0}")]
    Decode(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("communication budget exceeded: {used_bits} bits used, {budget_bits} allowed ({})", fmt_breakdown(.per_agent))]
    Budget { budget_bits: u64, used_bits: u64, per_agent: Vec<AgentBytes> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_breakdown(per_agent: &[AgentBytes]) -> String {
    per_agent.iter().map(|a| format!("{}: {} B", a.agent, a.bytes)).collect::<Vec<_>>().join(", ")
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn decode(msg: impl Into<String>) -> Self {
        Error::Decode(msg.into())
    }

    /// Process exit code used by the `alf` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::Decode(_) => 3,
            Error::Budget { .. } => 4,
            Error::Config(_) | Error::Shape(_) => 5,
            Error::Io(_) => 1,
        }
    }
}
