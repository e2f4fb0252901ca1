//! Query latency against path length over a live TCP server.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use obge::protocol::{setup, Mode, SetupParams};
use obge::stats::{linear_regression, Regression};
use obge::{Error, Graph, Result};

use crate::client::{RemoteEnhanced, RemoteTrivial, TcpTransport};
use crate::config::ServerConfig;
use crate::deploy::split;
use crate::server::start_with;

#[derive(Debug, Clone)]
pub struct BenchParams {
    pub lengths: Vec<usize>,
    pub reps: usize,
    pub mode: Mode,
    pub z: usize,
    pub seed: Option<u64>,
    /// Untimed queries before measuring.
    pub warmup: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self { lengths: (1..=10).collect(), reps: 50, mode: Mode::Trivial, z: 5, seed: None, warmup: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchRow {
    pub path_len: usize,
    pub rep: usize,
    pub micros: u64,
}

/// Parses `a..b` (inclusive), `a..=b`, `a,b,c` or a single length.
pub fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse lengths {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let out: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (lo, hi) = (num(a)?, num(b.trim_start_matches('='))?);
        (lo..=hi).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

enum Session {
    Trivial(RemoteTrivial<TcpTransport>),
    Enhanced(RemoteEnhanced<TcpTransport>),
}

impl Session {
    fn query(&mut self, u: u32, v: u32) -> Result<Option<Vec<u32>>> {
        match self {
            Session::Trivial(c) => c.query(u, v),
            Session::Enhanced(c) => c.query(u, v),
        }
    }
}

/// Directed path graph on `n` vertices: the only path from `u` to `u + k` has length `k`.
pub fn path_graph(n: usize) -> Graph {
    let mut g = Graph::new(n, true);
    for u in 1..n as u32 {
        g.add_edge(u - 1, u, None).expect("path edges are valid");
    }
    g
}

/// Serves a 64-vertex path graph on loopback TCP and times `reps` queries
/// of every requested length. Lengths are interleaved within each rep so
/// slow drift affects all of them alike.
pub fn run_bench(p: &BenchParams) -> Result<Vec<BenchRow>> {
    let max = *p.lengths.iter().max().ok_or_else(|| Error::Config("no lengths".into()))?;
    let n = 64.max(max + 1);
    let g = path_graph(n);
    let params = SetupParams { mode: p.mode, z: p.z, seed: p.seed, ..SetupParams::default() };
    let parts = split(setup(&g, &params)?);
    let mut cfg = ServerConfig::new(p.mode, "");
    cfg.listen_addr = "127.0.0.1:0".into();
    cfg.z = p.z as u32;
    let server = start_with(cfg, parts.server, false)?;
    let transport = TcpTransport::connect(server.local_addr())?;
    let mut session = match (p.mode, parts.client) {
        (Mode::Trivial, Some(file)) => Session::Trivial(RemoteTrivial::new(parts.keys, file, transport, p.seed)?),
        _ => Session::Enhanced(RemoteEnhanced::new(&parts.keys, transport, p.seed)?),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(p.seed.unwrap_or(0) ^ 0xbe4c);
    let mut pick = |len: usize| {
        let u = rng.gen_range(0..n - len) as u32;
        (u, u + len as u32)
    };
    for i in 0..p.warmup {
        let (u, v) = pick(p.lengths[i % p.lengths.len()]);
        session.query(u, v)?;
    }
    let mut rows = Vec::with_capacity(p.reps * p.lengths.len());
    for rep in 0..p.reps {
        for &len in &p.lengths {
            let (u, v) = pick(len);
            let start = Instant::now();
            let path = session.query(u, v)?;
            let micros = start.elapsed().as_micros() as u64;
            if path.as_ref().map(|p| p.len().saturating_sub(1)) != Some(len) {
                return Err(Error::Integrity(format!("bench query {u}->{v} returned {path:?}")));
            }
            rows.push(BenchRow { path_len: len, rep, micros });
        }
    }
    drop(session);
    server.shutdown()?;
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    writeln!(out, "path_len,rep,micros")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.path_len, r.rep, r.micros)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    /// `(path length, mean micros)` in increasing length.
    pub means: Vec<(usize, f64)>,
    pub strictly_increasing: bool,
    pub fit: Regression,
}

pub fn summarize(rows: &[BenchRow]) -> Result<BenchSummary> {
    let mut by_len: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for r in rows {
        let e = by_len.entry(r.path_len).or_default();
        e.0 += r.micros as f64;
        e.1 += 1;
    }
    let means: Vec<(usize, f64)> = by_len.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect();
    let strictly_increasing = means.windows(2).all(|w| w[1].1 > w[0].1);
    let xs: Vec<f64> = rows.iter().map(|r| r.path_len as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.micros as f64).collect();
    Ok(BenchSummary { means, strictly_increasing, fit: linear_regression(&xs, &ys)? })
}
