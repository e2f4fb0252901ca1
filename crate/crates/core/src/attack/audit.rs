//! Leakage audit over a server-side access trace.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::recovery::{length_classes, length_only_candidates, path_length, uniform_guess, GuessOutcome, Pair};
use super::tree::build_sp_trees;
use crate::error::{Error, Result};
use crate::graph::{Weight, WeightedGraph};
use crate::stats::{
    bin_bits_for, chi_square_lag1, chi_square_two_sample, chi_square_uniform, leaf_bin, TestOutcome,
};
use crate::trace::{MsgKind, TraceRecord};

/// Tree id of the data tree in every trace.
pub const DATA_TREE: u16 = 0;

/// Server-side view of one query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryRounds {
    /// ReadPath requests on the data tree.
    pub rounds: usize,
    pub writes: usize,
    pub leaves: Vec<u64>,
}

impl QueryRounds {
    pub fn from_records(records: &[TraceRecord]) -> Self {
        let mut q = QueryRounds::default();
        for r in records.iter().filter(|r| r.tree == DATA_TREE) {
            match r.kind {
                MsgKind::ReadPath => {
                    q.rounds += 1;
                    q.leaves.extend(r.leaf);
                }
                MsgKind::WritePath => q.writes += 1,
                _ => {}
            }
        }
        q
    }
}

/// Splits a trace into per-query pieces. Enclave requests delimit queries
/// when present; otherwise `lengths` (path length of each query, in order)
/// assigns `length + 1` data-tree rounds to each query.
pub fn segment_trace(records: &[TraceRecord], lengths: Option<&[usize]>) -> Result<Vec<QueryRounds>> {
    let starts: Vec<usize> =
        records.iter().enumerate().filter(|(_, r)| r.kind == MsgKind::EnclaveRequest).map(|(i, _)| i).collect();
    if !starts.is_empty() {
        let mut out = Vec::with_capacity(starts.len());
        for (k, &s) in starts.iter().enumerate() {
            let end = starts.get(k + 1).copied().unwrap_or(records.len());
            out.push(QueryRounds::from_records(&records[s..end]));
        }
        return Ok(out);
    }
    let Some(lengths) = lengths else {
        return Ok(vec![QueryRounds::from_records(records)]);
    };
    let mut out = Vec::with_capacity(lengths.len());
    let mut i = 0;
    for &len in lengths {
        let start = i;
        let mut reads = 0;
        while i < records.len() {
            let r = &records[i];
            if r.tree == DATA_TREE && r.kind == MsgKind::ReadPath {
                if reads == len + 1 {
                    break;
                }
                reads += 1;
            }
            i += 1;
        }
        out.push(QueryRounds::from_records(&records[start..i]));
    }
    if records[i..].iter().any(|r| r.tree == DATA_TREE && r.kind == MsgKind::ReadPath) {
        out.push(QueryRounds::from_records(&records[i..]));
    }
    Ok(out)
}

/// Depth implied by the largest leaf seen.
pub fn infer_depth(records: &[TraceRecord]) -> u32 {
    let max = records.iter().filter_map(|r| r.leaf).max().unwrap_or(0);
    64 - max.leading_zeros()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSample {
    pub length: usize,
    pub first: Pair,
    pub second: Pair,
    pub reps: (usize, usize),
    pub test: TestOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub queries: usize,
    pub depth: u32,
    /// Queries whose data-tree round count differs from path length + 1.
    /// `None` without ground truth.
    pub round_mismatches: Option<usize>,
    /// Queries whose reads and writes are not paired.
    pub unpaired: usize,
    /// Distinct ReadPath/WritePath byte counts per tree.
    pub widths: BTreeMap<u16, BTreeSet<u64>>,
    pub leaf_bins: usize,
    pub uniformity: Option<TestOutcome>,
    pub independence: Option<TestOutcome>,
    pub two_sample: Option<TwoSample>,
    pub recovery: Option<GuessOutcome>,
}

impl AuditReport {
    pub fn constant_width(&self) -> bool {
        self.widths.values().all(|w| w.len() <= 1)
    }

    /// True when every check that ran is consistent with length-only leakage at `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.round_mismatches.unwrap_or(0) == 0
            && self.unpaired == 0
            && self.constant_width()
            && [self.uniformity, self.independence, self.two_sample.as_ref().map(|t| t.test)]
                .iter()
                .flatten()
                .all(|t| t.accepts(alpha))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k},{v}");
        };
        row("queries", self.queries.to_string());
        row("depth", self.depth.to_string());
        if let Some(m) = self.round_mismatches {
            row("round_mismatches", m.to_string());
        }
        row("unpaired", self.unpaired.to_string());
        row("constant_width", self.constant_width().to_string());
        for (tree, w) in &self.widths {
            let list: Vec<String> = w.iter().map(u64::to_string).collect();
            row(&format!("path_bytes_tree{tree}"), list.join(" "));
        }
        row("leaf_bins", self.leaf_bins.to_string());
        for (name, t) in [("uniformity", self.uniformity), ("independence", self.independence)] {
            if let Some(t) = t {
                row(&format!("{name}_chi2"), format!("{:.4}", t.statistic));
                row(&format!("{name}_dof"), t.dof.to_string());
                row(&format!("{name}_p"), format!("{:.6}", t.p_value));
            }
        }
        if let Some(t) = &self.two_sample {
            row("two_sample_length", t.length.to_string());
            row("two_sample_queries", format!("{}-{} {}-{}", t.first.0, t.first.1, t.second.0, t.second.1));
            row("two_sample_chi2", format!("{:.4}", t.test.statistic));
            row("two_sample_p", format!("{:.6}", t.test.p_value));
        }
        if let Some(r) = &self.recovery {
            row("recovery_accuracy", format!("{:.4}", r.accuracy));
            row("recovery_baseline", format!("{:.4}", r.baseline));
        }
        s
    }

    pub fn summary(&self, alpha: f64) -> String {
        let verdict = |t: &TestOutcome| if t.accepts(alpha) { "accept" } else { "REJECT" };
        let mut s = String::new();
        let _ = writeln!(s, "queries audited: {} (tree depth {})", self.queries, self.depth);
        match self.round_mismatches {
            Some(0) => s.push_str("rounds: every query took path length + 1 data-tree rounds\n"),
            Some(m) => {
                let _ = writeln!(s, "rounds: {m} queries deviate from path length + 1");
            }
            None => s.push_str("rounds: not checked (no ground truth)\n"),
        }
        let _ = writeln!(
            s,
            "path widths: {}",
            if self.constant_width() { "constant per tree" } else { "VARY within a tree" }
        );
        if let Some(t) = &self.uniformity {
            let _ = writeln!(s, "leaf uniformity over {} bins: p = {:.4} ({})", self.leaf_bins, t.p_value, verdict(t));
        }
        if let Some(t) = &self.independence {
            let _ = writeln!(s, "consecutive-leaf independence: p = {:.4} ({})", t.p_value, verdict(t));
        }
        if let Some(t) = &self.two_sample {
            let _ = writeln!(
                s,
                "equal-length queries {:?} vs {:?} (length {}, {}+{} runs): p = {:.4} ({})",
                t.first, t.second, t.length, t.reps.0, t.reps.1, t.test.p_value, verdict(&t.test)
            );
        }
        if let Some(r) = &self.recovery {
            let _ = writeln!(
                s,
                "length-only recovery: accuracy {:.4} vs uniform baseline {:.4}",
                r.accuracy, r.baseline
            );
        }
        let _ = writeln!(s, "overall: {}", if self.passes(alpha) { "PASS" } else { "FAIL" });
        s
    }
}

/// Leaf samples binned so each bin expects at least five hits.
fn binned(leaves: &[u64], depth: u32, bits: u32) -> Vec<u64> {
    let mut counts = vec![0u64; 1 << bits.min(depth)];
    for &l in leaves {
        counts[leaf_bin(l, depth, bits)] += 1;
    }
    counts
}

/// Runs every check the inputs allow. `truth` pairs the graph with the
/// queries the trace was produced from, in order.
pub fn audit_trace<W: Weight>(
    records: &[TraceRecord],
    truth: Option<(&WeightedGraph<W>, &[Pair])>,
    depth: Option<u32>,
    seed: u64,
) -> Result<AuditReport> {
    let depth = depth.unwrap_or_else(|| infer_depth(records));
    let trees = truth.map(|(g, _)| build_sp_trees(g));
    let lengths: Option<Vec<usize>> = match (&trees, truth) {
        (Some(t), Some((g, qs))) => {
            let n = g.vertex_count() as u32;
            if let Some(&(u, v)) = qs.iter().find(|&&(u, v)| u >= n || v >= n) {
                return Err(Error::VertexOutOfRange { vertex: u.max(v) as u64, vertex_count: n as usize });
            }
            Some(qs.iter().map(|&(u, v)| path_length(t, u, v)).collect())
        }
        _ => None,
    };
    let segments = segment_trace(records, lengths.as_deref())?;

    let mut widths: BTreeMap<u16, BTreeSet<u64>> = BTreeMap::new();
    for r in records.iter().filter(|r| matches!(r.kind, MsgKind::ReadPath | MsgKind::WritePath)) {
        widths.entry(r.tree).or_default().insert(r.bytes);
    }
    let unpaired = segments.iter().filter(|q| q.rounds != q.writes).count();
    let round_mismatches = lengths.as_ref().map(|ls| {
        let extra = segments.len().saturating_sub(ls.len()) + ls.len().saturating_sub(segments.len());
        extra + segments.iter().zip(ls).filter(|(q, &l)| q.rounds != l + 1).count()
    });

    let leaves: Vec<u64> = segments.iter().flat_map(|q| q.leaves.iter().copied()).collect();
    let bits = bin_bits_for(leaves.len(), depth, 5.0);
    let (uniformity, independence) = if bits == 0 {
        (None, None)
    } else {
        let u = chi_square_uniform(&binned(&leaves, depth, bits))?;
        // r x r table with r^2 <= n / 5
        let lag_bits = (bin_bits_for(leaves.len(), 2 * depth, 5.0) / 2).max(1);
        let seq: Vec<usize> = leaves.iter().map(|&l| leaf_bin(l, depth, lag_bits)).collect();
        (Some(u), chi_square_lag1(&seq, 1 << lag_bits).ok())
    };

    let mut two_sample = None;
    let mut recovery = None;
    if let (Some(trees), Some((_, qs))) = (&trees, truth) {
        let mut per_query: HashMap<Pair, Vec<u64>> = HashMap::new();
        let mut reps: HashMap<Pair, usize> = HashMap::new();
        for (q, seg) in qs.iter().zip(&segments) {
            per_query.entry(*q).or_default().extend(&seg.leaves);
            *reps.entry(*q).or_default() += 1;
        }
        let mut by_len: BTreeMap<usize, Vec<Pair>> = BTreeMap::new();
        for (&q, _) in &reps {
            by_len.entry(path_length(trees, q.0, q.1)).or_default().push(q);
        }
        let best = by_len
            .iter()
            .filter(|(_, qs)| qs.len() >= 2)
            .map(|(&l, qs)| {
                let mut qs = qs.clone();
                qs.sort_by_key(|q| (std::cmp::Reverse(reps[q]), *q));
                (l, qs[0], qs[1])
            })
            .max_by_key(|&(_, a, b)| reps[&a].min(reps[&b]));
        if let Some((length, first, second)) = best {
            let (a, b) = (&per_query[&first], &per_query[&second]);
            let bits = bin_bits_for(a.len().min(b.len()), depth, 5.0);
            if bits > 0 {
                let test = chi_square_two_sample(&binned(a, depth, bits), &binned(b, depth, bits))?;
                two_sample = Some(TwoSample { length, first, second, reps: (reps[&first], reps[&second]), test });
            }
        }
        let observed: Vec<usize> = segments.iter().map(|q| q.rounds.saturating_sub(1)).collect();
        let sets = length_only_candidates(&length_classes(trees), &observed);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        recovery = Some(uniform_guess(&sets, qs, &mut rng));
    }

    Ok(AuditReport {
        queries: segments.len(),
        depth,
        round_mismatches,
        unpaired,
        widths,
        leaf_bins: if bits == 0 { 0 } else { 1 << bits },
        uniformity,
        independence,
        two_sample,
        recovery,
    })
}
