//! Query recovery from token chains, and the length-only guess that is all
//! an OBGE trace allows.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::tree::{bipartite_saturates, build_sp_trees, marked_label, Embedder, RootedTree, SpTree};
use crate::crypto::Token;
use crate::error::{Error, Result};
use crate::graph::{Vertex, Weight, WeightedGraph};

pub type Pair = (Vertex, Vertex);

/// Plaintext queries consistent with one observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    /// Hops revealed by the observation.
    pub length: usize,
    pub candidates: Vec<Pair>,
}

impl CandidateSet {
    pub fn contains(&self, q: Pair) -> bool {
        self.candidates.binary_search(&q).is_ok()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Hop count of the chosen shortest path, 0 when `u == v` or unreachable.
pub fn path_length(trees: &[SpTree], u: Vertex, v: Vertex) -> usize {
    let t = &trees[v as usize];
    if t.contains(u as usize) {
        t.depth(u as usize)
    } else {
        0
    }
}

/// `(length, label)` where the label is the destination tree's AHU form with
/// the path from `u` marked. Equal signatures mean no amount of same-destination
/// overlap can tell the two queries apart. `None` for zero-length queries.
pub fn query_signature(trees: &[SpTree], u: Vertex, v: Vertex) -> Option<(usize, String)> {
    let t = &trees[v as usize];
    if u == v || !t.contains(u as usize) {
        return None;
    }
    let path = t.root_path(u as usize);
    Some((path.len() - 1, marked_label(t, t.root(), &path)))
}

/// Every ordered pair grouped by path length.
pub fn length_classes(trees: &[SpTree]) -> BTreeMap<usize, Vec<Pair>> {
    let n = trees.len() as Vertex;
    let mut out: BTreeMap<usize, Vec<Pair>> = BTreeMap::new();
    for u in 0..n {
        for v in 0..n {
            out.entry(path_length(trees, u, v)).or_default().push((u, v));
        }
    }
    out
}

struct Group {
    root_token: Token,
    tree: RootedTree,
    index: HashMap<Token, usize>,
    destinations: Vec<Vertex>,
}

/// Offline state of the attack: the destination trees of the known graph.
pub struct QueryRecovery {
    trees: Vec<SpTree>,
    zero: Vec<Pair>,
    by_depth: Vec<Vec<Vec<usize>>>,
}

impl QueryRecovery {
    pub fn new<W: Weight>(g: &WeightedGraph<W>) -> Self {
        Self::from_trees(build_sp_trees(g))
    }

    pub fn from_trees(trees: Vec<SpTree>) -> Self {
        let zero = length_classes(&trees).remove(&0).unwrap_or_default();
        let by_depth = trees
            .iter()
            .map(|t| {
                let mut levels: Vec<Vec<usize>> = Vec::new();
                for x in t.nodes() {
                    let d = t.depth(x);
                    if levels.len() <= d {
                        levels.resize(d + 1, Vec::new());
                    }
                    levels[d].push(x);
                }
                levels
            })
            .collect();
        Self { trees, zero, by_depth }
    }

    pub fn trees(&self) -> &[SpTree] {
        &self.trees
    }

    /// Candidate set for every observed chain, in order.
    pub fn recover(&self, observed: &[Vec<Token>]) -> Result<Vec<CandidateSet>> {
        let groups = self.build_groups(observed)?;
        let mut cache: HashMap<Token, Vec<Pair>> = HashMap::new();
        let mut embedders: HashMap<(usize, Vertex), Embedder<'_>> = HashMap::new();
        let root_of: HashMap<Token, usize> = groups.iter().enumerate().map(|(i, g)| (g.root_token, i)).collect();

        let mut out = Vec::with_capacity(observed.len());
        for chain in observed {
            let first = chain[0];
            let length = chain.len() - 1;
            if let Some(c) = cache.get(&first) {
                out.push(CandidateSet { length, candidates: c.clone() });
                continue;
            }
            let mut candidates = if length == 0 {
                match root_of.get(&first) {
                    Some(&gi) => groups[gi].destinations.iter().map(|&v| (v, v)).collect(),
                    None => self.zero.clone(),
                }
            } else {
                let gi = root_of[chain.last().unwrap()];
                let group = &groups[gi];
                let small_path = group.tree.root_path(group.index[&first]);
                let mut found = Vec::new();
                for &v in &group.destinations {
                    let Some(level) = self.by_depth[v as usize].get(length) else { continue };
                    let big = &self.trees[v as usize];
                    let emb = embedders.entry((gi, v)).or_insert_with(|| Embedder::new(&group.tree, big));
                    for &u in level {
                        if emb.embeds_anchored(&small_path, &big.root_path(u)) {
                            found.push((u as Vertex, v));
                        }
                    }
                }
                found
            };
            candidates.sort_unstable();
            cache.insert(first, candidates.clone());
            out.push(CandidateSet { length, candidates });
        }
        Ok(out)
    }

    /// Groups chains by their terminal token, builds the observed token tree
    /// of each group and the destinations it can sit on.
    fn build_groups(&self, observed: &[Vec<Token>]) -> Result<Vec<Group>> {
        let mut owner: HashMap<Token, usize> = HashMap::new();
        let mut parents: Vec<HashMap<Token, Option<Token>>> = Vec::new();
        let mut roots: HashMap<Token, usize> = HashMap::new();
        for chain in observed {
            if chain.is_empty() {
                return Err(Error::Format("empty token chain".into()));
            }
            if chain.len() == 1 {
                continue;
            }
            let root = *chain.last().unwrap();
            let gi = *roots.entry(root).or_insert_with(|| {
                parents.push(HashMap::from([(root, None)]));
                parents.len() - 1
            });
            for w in chain.windows(2) {
                let prev = parents[gi].insert(w[0], Some(w[1]));
                if prev.is_some_and(|p| p != Some(w[1])) {
                    return Err(Error::Format("token chains disagree on a successor".into()));
                }
            }
            for tk in chain {
                if *owner.entry(*tk).or_insert(gi) != gi {
                    return Err(Error::Format("token appears under two destinations".into()));
                }
            }
        }

        let mut groups: Vec<Group> = parents
            .into_iter()
            .map(|p| {
                let index: HashMap<Token, usize> = p.keys().enumerate().map(|(i, &t)| (t, i)).collect();
                let root_token = p.iter().find(|(_, par)| par.is_none()).map(|(t, _)| *t).unwrap();
                let mut arr = vec![None; index.len()];
                for (t, par) in &p {
                    arr[index[t]] = par.map(|q| index[&q]);
                }
                let tree = RootedTree::from_parents(index[&root_token], &arr);
                Group { root_token, tree, index, destinations: Vec::new() }
            })
            .collect();

        for g in &mut groups {
            let size = g.tree.len();
            g.destinations = (0..self.trees.len())
                .filter(|&v| {
                    let t = &self.trees[v];
                    t.len() >= size && Embedder::new(&g.tree, t).embeds(g.tree.root(), v)
                })
                .map(|v| v as Vertex)
                .collect();
        }
        prune_by_matching(&mut groups, self.trees.len());
        Ok(groups)
    }
}

/// Distinct groups have distinct destinations, so keep `(group, v)` only if
/// some assignment of all groups uses it.
fn prune_by_matching(groups: &mut [Group], n: usize) {
    let adj: Vec<Vec<usize>> = groups.iter().map(|g| g.destinations.iter().map(|&v| v as usize).collect()).collect();
    if !bipartite_saturates(&adj, n) {
        return;
    }
    let mut keep = adj.clone();
    for (gi, dests) in adj.iter().enumerate() {
        keep[gi] = dests
            .iter()
            .copied()
            .filter(|&v| {
                let forced: Vec<Vec<usize>> = adj
                    .iter()
                    .enumerate()
                    .map(|(j, d)| if j == gi { vec![v] } else { d.iter().copied().filter(|&x| x != v).collect() })
                    .collect();
                bipartite_saturates(&forced, n)
            })
            .collect();
    }
    for (g, k) in groups.iter_mut().zip(keep) {
        g.destinations = k.into_iter().map(|v| v as Vertex).collect();
    }
}

pub fn query_recovery<W: Weight>(g: &WeightedGraph<W>, observed: &[Vec<Token>]) -> Result<Vec<CandidateSet>> {
    QueryRecovery::new(g).recover(observed)
}

/// Candidate sets for a length-only view of the queries.
pub fn length_only_candidates(classes: &BTreeMap<usize, Vec<Pair>>, lengths: &[usize]) -> Vec<CandidateSet> {
    lengths
        .iter()
        .map(|&length| CandidateSet { length, candidates: classes.get(&length).cloned().unwrap_or_default() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessOutcome {
    pub queries: usize,
    pub correct: usize,
    /// Fraction of uniform guesses that hit the true query.
    pub accuracy: f64,
    /// Mean of `1 / |candidates|`, the expected accuracy of a uniform guess.
    pub baseline: f64,
}

/// Guesses uniformly inside each candidate set and scores against the truth.
pub fn uniform_guess<R: Rng>(sets: &[CandidateSet], truth: &[Pair], rng: &mut R) -> GuessOutcome {
    let mut correct = 0;
    let mut baseline = 0.0;
    for (set, &q) in sets.iter().zip(truth) {
        if set.is_empty() {
            continue;
        }
        baseline += 1.0 / set.len() as f64;
        if set.candidates[rng.gen_range(0..set.len())] == q {
            correct += 1;
        }
    }
    let queries = sets.len().min(truth.len());
    let denom = queries.max(1) as f64;
    GuessOutcome { queries, correct, accuracy: correct as f64 / denom, baseline: baseline / denom }
}
