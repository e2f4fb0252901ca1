//! Oblivious graph encryption.
//!
//! A client precomputes next-hop entries for every connected vertex pair,
//! seals them into Path ORAM blocks and hands the tree to an untrusted
//! server. A shortest-path query walks the path one ORAM access per hop, so
//! the server observes only how many accesses a query took.

pub mod attack;
pub mod codec;
pub mod crypto;
pub mod error;
pub mod graph;
pub mod oram;
pub mod protocol;
pub mod recursive;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};

/// Graph with floating-point edge weights.
pub type Graph = graph::WeightedGraph<f64>;
/// Graph with exact integer edge weights.
pub type IntGraph = graph::WeightedGraph<u64>;
