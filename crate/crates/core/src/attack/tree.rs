//! Rooted trees, shortest-path trees and AHU canonical labels.

use std::collections::HashMap;

use crate::graph::{compute_sp_matrix, Vertex, Weight, WeightedGraph};

/// Rooted tree over node ids `0..capacity`. Nodes outside the tree are
/// simply absent; an SP tree keeps vertex ids as node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedTree {
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    present: Vec<bool>,
}

impl RootedTree {
    pub fn singleton(capacity: usize, root: usize) -> Self {
        let mut present = vec![false; capacity];
        present[root] = true;
        Self { root, parent: vec![None; capacity], children: vec![Vec::new(); capacity], present }
    }

    /// Builds a tree from a parent array; `parents[root]` must be `None`.
    pub fn from_parents(root: usize, parents: &[Option<usize>]) -> Self {
        let mut t = Self::singleton(parents.len(), root);
        for (x, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                t.attach(x, p);
            }
        }
        t
    }

    /// Adds `child` under `parent`. Both ids must be below the capacity.
    pub fn attach(&mut self, child: usize, parent: usize) {
        self.present[child] = true;
        self.present[parent] = true;
        self.parent[child] = Some(parent);
        self.children[parent].push(child);
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn contains(&self, x: usize) -> bool {
        self.present.get(x).copied().unwrap_or(false)
    }

    pub fn parent(&self, x: usize) -> Option<usize> {
        self.parent[x]
    }

    pub fn children(&self, x: usize) -> &[usize] {
        &self.children[x]
    }

    pub fn len(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.present.iter().enumerate().filter(|(_, &p)| p).map(|(x, _)| x)
    }

    /// `(child, parent)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes().filter_map(|x| self.parent[x].map(|p| (x, p))).collect()
    }

    /// Distance from `x` up to the root.
    pub fn depth(&self, mut x: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[x] {
            x = p;
            d += 1;
        }
        d
    }

    /// `x` followed by its ancestors up to the root.
    pub fn root_path(&self, mut x: usize) -> Vec<usize> {
        let mut out = vec![x];
        while let Some(p) = self.parent[x] {
            out.push(p);
            x = p;
        }
        out
    }

    pub fn subtree_size(&self, x: usize) -> usize {
        1 + self.children[x].iter().map(|&c| self.subtree_size(c)).sum::<usize>()
    }
}

/// Shortest-path tree toward `root`: the parent of `w` is the next hop from `w`.
pub type SpTree = RootedTree;

/// One tree per destination, indexed by destination.
pub fn build_sp_trees<W: Weight>(g: &WeightedGraph<W>) -> Vec<SpTree> {
    let m = compute_sp_matrix(g);
    let n = g.vertex_count();
    (0..n as Vertex)
        .map(|v| {
            let parents: Vec<Option<usize>> =
                (0..n as Vertex).map(|w| m.next_hop(w, v).map(|p| p as usize)).collect();
            RootedTree::from_parents(v as usize, &parents)
        })
        .collect()
}

/// AHU canonical label of the subtree rooted at `x`.
pub fn ahu_label(t: &RootedTree, x: usize) -> String {
    marked_label(t, x, &[])
}

/// AHU label in which nodes listed in `marked` use square brackets. Two
/// trees with the same marked label are isomorphic by a map that carries
/// marked nodes onto marked nodes.
pub fn marked_label(t: &RootedTree, x: usize, marked: &[usize]) -> String {
    let mut kids: Vec<String> = t.children(x).iter().map(|&c| marked_label(t, c, marked)).collect();
    kids.sort_unstable();
    let (open, close) = if marked.contains(&x) { ('[', ']') } else { ('(', ')') };
    let mut out = String::with_capacity(2 + kids.iter().map(String::len).sum::<usize>());
    out.push(open);
    for k in &kids {
        out.push_str(k);
    }
    out.push(close);
    out
}

/// AHU label of every node's subtree, computed bottom-up once.
pub fn all_labels(t: &RootedTree) -> HashMap<usize, String> {
    fn go(t: &RootedTree, x: usize, out: &mut HashMap<usize, String>) -> String {
        let mut kids: Vec<String> = t.children(x).iter().map(|&c| go(t, c, out)).collect();
        kids.sort_unstable();
        let label = format!("({})", kids.concat());
        out.insert(x, label.clone());
        label
    }
    let mut out = HashMap::new();
    go(t, t.root(), &mut out);
    out
}

/// Decides whether the subtree of `small` at some node can be mapped into the
/// subtree of `big` at another node by an injective, parent-preserving map
/// sending the first root onto the second.
pub struct Embedder<'a> {
    small: &'a RootedTree,
    big: &'a RootedTree,
    small_labels: HashMap<usize, String>,
    big_labels: HashMap<usize, String>,
    small_size: HashMap<usize, usize>,
    big_size: HashMap<usize, usize>,
    memo: HashMap<(usize, usize), bool>,
}

fn sizes(t: &RootedTree) -> HashMap<usize, usize> {
    fn go(t: &RootedTree, x: usize, out: &mut HashMap<usize, usize>) -> usize {
        let s = 1 + t.children(x).iter().map(|&c| go(t, c, out)).sum::<usize>();
        out.insert(x, s);
        s
    }
    let mut out = HashMap::new();
    go(t, t.root(), &mut out);
    out
}

impl<'a> Embedder<'a> {
    pub fn new(small: &'a RootedTree, big: &'a RootedTree) -> Self {
        Self {
            small_labels: all_labels(small),
            big_labels: all_labels(big),
            small_size: sizes(small),
            big_size: sizes(big),
            small,
            big,
            memo: HashMap::new(),
        }
    }

    pub fn embeds(&mut self, x: usize, y: usize) -> bool {
        if let Some(&r) = self.memo.get(&(x, y)) {
            return r;
        }
        let r = if self.small_size[&x] > self.big_size[&y] {
            false
        } else if self.small_size[&x] == self.big_size[&y] {
            self.small_labels[&x] == self.big_labels[&y]
        } else {
            let xs = self.small.children(x).to_vec();
            let ys = self.big.children(y).to_vec();
            self.match_children(&xs, &ys)
        };
        self.memo.insert((x, y), r);
        r
    }

    /// True when every node in `xs` can be paired with a distinct node in
    /// `ys` whose subtree admits it.
    fn match_children(&mut self, xs: &[usize], ys: &[usize]) -> bool {
        if xs.len() > ys.len() {
            return false;
        }
        let adj: Vec<Vec<usize>> =
            xs.iter().map(|&a| (0..ys.len()).filter(|&j| self.embeds(a, ys[j])).collect()).collect();
        bipartite_saturates(&adj, ys.len())
    }

    /// Like [`Self::embeds`] on the roots, with the extra constraint that
    /// the chain `small_path` (a node followed by its ancestors) lands on
    /// `big_path` position for position.
    pub fn embeds_anchored(&mut self, small_path: &[usize], big_path: &[usize]) -> bool {
        if small_path.len() != big_path.len() {
            return false;
        }
        for i in 0..small_path.len() {
            let (x, y) = (small_path[i], big_path[i]);
            let skip_x = i.checked_sub(1).map(|j| small_path[j]);
            let skip_y = i.checked_sub(1).map(|j| big_path[j]);
            let xs: Vec<usize> = self.small.children(x).iter().copied().filter(|&c| Some(c) != skip_x).collect();
            let ys: Vec<usize> = self.big.children(y).iter().copied().filter(|&c| Some(c) != skip_y).collect();
            if !self.match_children(&xs, &ys) {
                return false;
            }
        }
        true
    }
}

/// Kuhn's augmenting-path matching. `adj[i]` lists the right vertices left
/// vertex `i` may take; returns whether every left vertex is matched.
pub fn bipartite_saturates(adj: &[Vec<usize>], right: usize) -> bool {
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if std::mem::replace(&mut seen[j], true) {
                continue;
            }
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right];
    (0..adj.len()).all(|i| augment(i, adj, &mut vec![false; right], &mut owner))
}
