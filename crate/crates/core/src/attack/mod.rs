//! Baseline GKT scheme, the query-recovery attack on its token chains, and
//! the auditor that checks an OBGE trace leaks only path lengths.

pub mod audit;
pub mod gkt;
pub mod recovery;
pub mod tree;

pub use audit::{audit_trace, segment_trace, AuditReport, QueryRounds};
pub use gkt::{gkt_setup, read_token_log, write_token_log, GktScheme};
pub use recovery::{
    length_classes, length_only_candidates, path_length, query_recovery, query_signature, uniform_guess, CandidateSet,
    GuessOutcome, Pair, QueryRecovery,
};
pub use tree::{ahu_label, build_sp_trees, RootedTree, SpTree};
