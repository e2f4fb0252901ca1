use thiserror::Error;

use crate::graph::Vertex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("self-loop on vertex {vertex}{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    SelfLoop { vertex: Vertex, line: Option<usize> },
    #[error("edge weight must be finite and non-negative{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    InvalidWeight { line: Option<usize> },
    #[error("vertex {vertex} out of range for {vertex_count} vertices")]
    VertexOutOfRange { vertex: u64, vertex_count: usize },
    #[error("unsupported security parameter {0} (expected 128 or 256)")]
    UnsupportedLambda(u32),
    #[error("plaintext of {len} bytes exceeds padded width {pad_to}")]
    PlaintextTooLong { len: usize, pad_to: usize },
    #[error("authentication failed")]
    Authentication,
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("stash overflow: {occupancy} blocks exceeds limit {limit}")]
    StashOverflow { occupancy: usize, limit: usize },
    #[error("leaf {leaf} out of range for depth {depth}")]
    LeafOutOfRange { leaf: u64, depth: u32 },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("storage transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
