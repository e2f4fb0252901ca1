//! Plaintext graphs, all-pairs next-hop tables and a shortest-path oracle.
//!
//! Shortest paths are ranked by `(total weight, hop count)` and ties among
//! equally short paths are broken by taking the smallest next-hop vertex id at
//! every step. Ranking by hop count second keeps zero-weight cycles from ever
//! making a next-hop chase loop.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt::Debug;
use std::io::BufRead;
use std::str::FromStr;

use num_traits::{Num, ToPrimitive};

use crate::error::{Error, Result};

/// Canonical vertex identifier.
pub type Vertex = u32;

/// Edge weight scalar. Implemented for every numeric type that can be ordered,
/// parsed and checked for finiteness.
pub trait Weight: Num + Copy + PartialOrd + ToPrimitive + FromStr + Debug + Send + Sync {}

impl<T> Weight for T where T: Num + Copy + PartialOrd + ToPrimitive + FromStr + Debug + Send + Sync {}

fn check_weight<W: Weight>(w: W) -> bool {
    w.to_f64().is_some_and(|f| f.is_finite()) && w >= W::zero()
}

/// A static graph with canonical integer vertex ids `0..vertex_count`.
///
/// Undirected graphs store each edge in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph<W> {
    directed: bool,
    weighted: bool,
    out: Vec<BTreeMap<Vertex, W>>,
}

impl<W: Weight> WeightedGraph<W> {
    pub fn new(vertex_count: usize, directed: bool) -> Self {
        Self {
            directed,
            weighted: false,
            out: vec![BTreeMap::new(); vertex_count],
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.out.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// True when at least one edge carried an explicit weight. Unweighted
    /// graphs are searched with BFS.
    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// Adds an edge, collapsing duplicates to the minimum weight. A missing
    /// weight counts as one.
    pub fn add_edge(&mut self, u: Vertex, v: Vertex, weight: Option<W>) -> Result<()> {
        let n = self.vertex_count();
        for x in [u, v] {
            if x as usize >= n {
                return Err(Error::VertexOutOfRange { vertex: x as u64, vertex_count: n });
            }
        }
        if u == v {
            return Err(Error::SelfLoop { vertex: u, line: None });
        }
        if let Some(w) = weight {
            if !check_weight(w) {
                return Err(Error::InvalidWeight { line: None });
            }
            self.weighted = true;
        }
        let w = weight.unwrap_or_else(W::one);
        self.insert(u, v, w);
        if !self.directed {
            self.insert(v, u, w);
        }
        Ok(())
    }

    fn insert(&mut self, u: Vertex, v: Vertex, w: W) {
        self.out[u as usize]
            .entry(v)
            .and_modify(|cur| {
                if w < *cur {
                    *cur = w;
                }
            })
            .or_insert(w);
    }

    /// Number of stored edges; an undirected edge counts once.
    pub fn edge_count(&self) -> usize {
        let arcs: usize = self.out.iter().map(BTreeMap::len).sum();
        if self.directed {
            arcs
        } else {
            arcs / 2
        }
    }

    /// Out-neighbours of `u` in increasing id order.
    pub fn neighbors(&self, u: Vertex) -> impl Iterator<Item = (Vertex, W)> + '_ {
        self.out[u as usize].iter().map(|(&v, &w)| (v, w))
    }

    pub fn has_edge(&self, u: Vertex, v: Vertex) -> bool {
        self.out.get(u as usize).is_some_and(|m| m.contains_key(&v))
    }

    pub fn weight(&self, u: Vertex, v: Vertex) -> Option<W> {
        self.out.get(u as usize)?.get(&v).copied()
    }

    /// All stored arcs `(u, v, w)`. Undirected edges appear in both directions.
    pub fn arcs(&self) -> impl Iterator<Item = (Vertex, Vertex, W)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(u, m)| m.iter().map(move |(&v, &w)| (u as Vertex, v, w)))
    }

    fn reversed_adjacency(&self) -> Vec<Vec<(Vertex, W)>> {
        let mut rev = vec![Vec::new(); self.vertex_count()];
        for (u, v, w) in self.arcs() {
            rev[v as usize].push((u, w));
        }
        rev
    }

    fn check_vertex(&self, x: Vertex) -> Result<()> {
        if (x as usize) < self.vertex_count() {
            Ok(())
        } else {
            Err(Error::VertexOutOfRange { vertex: x as u64, vertex_count: self.vertex_count() })
        }
    }
}

/// Parses an edge list: one `u v [weight]` per line (tabs or spaces), an
/// optional `#vertices N` header, other `#` lines ignored.
pub fn load_graph<W: Weight, R: BufRead>(source: R, directed: bool) -> Result<WeightedGraph<W>> {
    let mut declared: Option<usize> = None;
    let mut edges = Vec::new();
    let mut max_id: Option<Vertex> = None;

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(count) = rest.strip_prefix("vertices") {
                let n = count.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    detail: format!("bad vertex count {:?}", count.trim()),
                })?;
                declared = Some(n);
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("expected 2 or 3 fields, found {}", fields.len()),
            });
        }
        let parse_id = |s: &str| {
            s.parse::<Vertex>().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("bad vertex id {s:?}"),
            })
        };
        let u = parse_id(fields[0])?;
        let v = parse_id(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => {
                let w = s.parse::<W>().map_err(|_| Error::Parse {
                    line: line_no,
                    detail: format!("bad weight {s:?}"),
                })?;
                if !check_weight(w) {
                    return Err(Error::InvalidWeight { line: Some(line_no) });
                }
                Some(w)
            }
            None => None,
        };
        if u == v {
            return Err(Error::SelfLoop { vertex: u, line: Some(line_no) });
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        edges.push((line_no, u, v, w));
    }

    let seen = max_id.map_or(0, |m| m as usize + 1);
    let n = declared.unwrap_or(seen);
    let mut g = WeightedGraph::new(n, directed);
    for (line_no, u, v, w) in edges {
        g.add_edge(u, v, w).map_err(|e| match e {
            Error::VertexOutOfRange { vertex, .. } => Error::Parse {
                line: line_no,
                detail: format!("vertex {vertex} exceeds declared count {n}"),
            },
            other => other,
        })?;
    }
    Ok(g)
}

/// Sentinel stored in [`SpMatrix`] cells with no next hop.
pub const NO_HOP: Vertex = Vertex::MAX;

/// Dense `|V| x |V|` next-hop table. Cell `(u, v)` holds the vertex right
/// after `u` on the chosen shortest `u -> v` path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpMatrix {
    n: usize,
    cells: Vec<Vertex>,
}

impl SpMatrix {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn next_hop(&self, u: Vertex, v: Vertex) -> Option<Vertex> {
        match self.cells[u as usize * self.n + v as usize] {
            NO_HOP => None,
            w => Some(w),
        }
    }

    /// Follows next hops from `u` to `v`. Returns `None` when `v` is
    /// unreachable and an empty path when `u == v`.
    pub fn path(&self, u: Vertex, v: Vertex) -> Option<Vec<Vertex>> {
        if u == v {
            return Some(Vec::new());
        }
        let mut path = vec![u];
        let mut cur = u;
        while cur != v {
            cur = self.next_hop(cur, v)?;
            path.push(cur);
            if path.len() > self.n {
                unreachable!("next-hop chase revisited a vertex");
            }
        }
        Some(path)
    }
}

#[derive(Debug, Clone, Copy)]
struct Key<W> {
    dist: W,
    hops: u32,
}

impl<W: Weight> Key<W> {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist
            .partial_cmp(&other.dist)
            .unwrap_or(Ordering::Equal)
            .then(self.hops.cmp(&other.hops))
    }
}

struct HeapItem<W> {
    key: Key<W>,
    vertex: Vertex,
}

impl<W: Weight> PartialEq for HeapItem<W> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<W: Weight> Eq for HeapItem<W> {}
impl<W: Weight> PartialOrd for HeapItem<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<W: Weight> Ord for HeapItem<W> {
    // min-heap on (key, vertex)
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.cmp_key(&self.key).then(other.vertex.cmp(&self.vertex))
    }
}

/// Distances from every vertex *to* `target`, ranked by (weight, hops).
fn distances_to<W: Weight>(
    g: &WeightedGraph<W>,
    rev: &[Vec<(Vertex, W)>],
    target: Vertex,
) -> Vec<Option<Key<W>>> {
    let n = g.vertex_count();
    let mut best: Vec<Option<Key<W>>> = vec![None; n];
    best[target as usize] = Some(Key { dist: W::zero(), hops: 0 });

    if !g.is_weighted() {
        let mut queue = VecDeque::from([target]);
        while let Some(x) = queue.pop_front() {
            let k = best[x as usize].expect("queued vertex has a key");
            for &(p, _) in &rev[x as usize] {
                if best[p as usize].is_none() {
                    best[p as usize] = Some(Key { dist: k.dist + W::one(), hops: k.hops + 1 });
                    queue.push_back(p);
                }
            }
        }
        return best;
    }

    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem { key: Key { dist: W::zero(), hops: 0 }, vertex: target });
    while let Some(HeapItem { key, vertex }) = heap.pop() {
        if std::mem::replace(&mut done[vertex as usize], true) {
            continue;
        }
        for &(p, w) in &rev[vertex as usize] {
            if done[p as usize] {
                continue;
            }
            let cand = Key { dist: key.dist + w, hops: key.hops + 1 };
            let better = match best[p as usize] {
                None => true,
                Some(cur) => cand.cmp_key(&cur) == Ordering::Less,
            };
            if better {
                best[p as usize] = Some(cand);
                heap.push(HeapItem { key: cand, vertex: p });
            }
        }
    }
    best
}

/// Next hops toward `target` for every source, `NO_HOP` where none exists.
fn next_hops_to<W: Weight>(
    g: &WeightedGraph<W>,
    rev: &[Vec<(Vertex, W)>],
    target: Vertex,
) -> Vec<Vertex> {
    let keys = distances_to(g, rev, target);
    let mut next = vec![NO_HOP; g.vertex_count()];
    for u in 0..g.vertex_count() as Vertex {
        if u == target {
            continue;
        }
        let Some(ku) = keys[u as usize] else { continue };
        // neighbours iterate in increasing id order, so the first match is the smallest
        for (w, wt) in g.neighbors(u) {
            if let Some(kw) = keys[w as usize] {
                if kw.hops + 1 == ku.hops && kw.dist + wt == ku.dist {
                    next[u as usize] = w;
                    break;
                }
            }
        }
        debug_assert_ne!(next[u as usize], NO_HOP, "reachable vertex without next hop");
    }
    next
}

pub fn compute_sp_matrix<W: Weight>(g: &WeightedGraph<W>) -> SpMatrix {
    let n = g.vertex_count();
    let rev = g.reversed_adjacency();
    let mut cells = vec![NO_HOP; n * n];
    for v in 0..n as Vertex {
        let col = next_hops_to(g, &rev, v);
        for (u, w) in col.into_iter().enumerate() {
            cells[u * n + v as usize] = w;
        }
    }
    SpMatrix { n, cells }
}

/// Next-hop dictionary: `(u, v) -> (w, v)` for every connected ordered pair
/// `u != v`, where `w` is the next hop from `u` toward `v`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Spdx {
    entries: BTreeMap<(Vertex, Vertex), (Vertex, Vertex)>,
}

impl Spdx {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, u: Vertex, v: Vertex) -> Option<(Vertex, Vertex)> {
        self.entries.get(&(u, v)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((Vertex, Vertex), (Vertex, Vertex))> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

/// Builds the dictionary one destination at a time without materializing
/// the dense matrix.
pub fn compute_spdx<W: Weight>(g: &WeightedGraph<W>) -> Spdx {
    let rev = g.reversed_adjacency();
    let mut entries = BTreeMap::new();
    for v in 0..g.vertex_count() as Vertex {
        for (u, w) in next_hops_to(g, &rev, v).into_iter().enumerate() {
            if w != NO_HOP {
                entries.insert((u as Vertex, v), (w, v));
            }
        }
    }
    Spdx { entries }
}

/// Shortest simple path from `u` to `v` computed by a forward search from
/// `u` that carries whole paths and keeps the lexicographically smallest one
/// among equally short candidates. Independent of [`SpMatrix`], so it serves
/// as a test oracle for it.
///
/// `Ok(None)` means unreachable; `u == v` yields an empty path.
pub fn spath_oracle<W: Weight>(
    g: &WeightedGraph<W>,
    u: Vertex,
    v: Vertex,
) -> Result<Option<Vec<Vertex>>> {
    g.check_vertex(u)?;
    g.check_vertex(v)?;
    if u == v {
        return Ok(Some(Vec::new()));
    }
    let n = g.vertex_count();
    let mut key: Vec<Option<Key<W>>> = vec![None; n];
    let mut path: Vec<Vec<Vertex>> = vec![Vec::new(); n];
    let mut done = vec![false; n];
    key[u as usize] = Some(Key { dist: W::zero(), hops: 0 });
    path[u as usize] = vec![u];

    let mut heap = BinaryHeap::new();
    heap.push(HeapItem { key: Key { dist: W::zero(), hops: 0 }, vertex: u });
    while let Some(HeapItem { key: k, vertex: x }) = heap.pop() {
        if std::mem::replace(&mut done[x as usize], true) {
            continue;
        }
        if x == v {
            break;
        }
        for (y, wt) in g.neighbors(x) {
            if done[y as usize] {
                continue;
            }
            let dist = if g.is_weighted() { k.dist + wt } else { k.dist + W::one() };
            let cand = Key { dist, hops: k.hops + 1 };
            let replace = match key[y as usize] {
                None => true,
                Some(cur) => match cand.cmp_key(&cur) {
                    Ordering::Less => true,
                    // equal keys imply equal hop counts, so the candidate and
                    // the incumbent have the same length
                    Ordering::Equal => {
                        path[x as usize].as_slice() < &path[y as usize][..path[y as usize].len() - 1]
                    }
                    Ordering::Greater => false,
                },
            };
            if replace {
                let mut p = path[x as usize].clone();
                p.push(y);
                path[y as usize] = p;
                key[y as usize] = Some(cand);
                heap.push(HeapItem { key: cand, vertex: y });
            }
        }
    }
    Ok(done[v as usize].then(|| std::mem::take(&mut path[v as usize])))
}
