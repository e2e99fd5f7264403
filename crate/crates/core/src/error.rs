use thiserror::Error;

use crate::topology::{DomainId, NodeId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("node {0} does not exist in a graph of {1} nodes")]
    InvalidNode(NodeId, usize),

    #[error("node {node} is not hosted by domain {domain}")]
    ForeignNode { node: NodeId, domain: DomainId },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite model state at round {round}, node {node}: {what}")]
    NonFinite { round: u32, node: NodeId, what: String },

    #[error("{0}")]
    EmptyInput(&'static str),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
