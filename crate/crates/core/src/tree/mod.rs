//! Rooted binary phylogenies stored as a node arena.
//!
//! Leaves occupy ids `0..n` in label order and internal vertices `n..2n-1`.
//! Each non-root node owns the branch to its parent, so a branch is named by
//! its lower endpoint. Stationary models only identify the unrooted tree; for
//! them the tree is kept in canonical form, rooted on the pendant edge of
//! leaf 0 with the sibling branch pinned at length zero.

mod moves;
mod newick;
mod splits;

pub use moves::{NniMove, RootMove, SprMove};
pub use newick::{parse_newick, parse_newick_with_labels, serialize_newick};
pub use splits::{
    majority_rule_consensus, root_split_frequencies, splits_of, uniform_rooted_log_prior, uniform_unrooted_log_prior,
    yule_log_prior, ConsensusTree, LeafSet, Split,
};

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub(crate) parent: Option<usize>,
    pub(crate) children: Option<[usize; 2]>,
    pub(crate) length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phylogeny {
    pub(crate) labels: Vec<String>,
    pub(crate) nodes: Vec<Node>,
    root: usize,
}

impl Phylogeny {
    /// Builds a tree from parent pointers and branch lengths. `parents[root]`
    /// must be `None`; every internal node must have exactly two children.
    pub fn from_parents(labels: Vec<String>, parents: &[Option<usize>], lengths: &[f64]) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::InvalidTree("need at least two leaves".into()));
        }
        if parents.len() != 2 * n - 1 || lengths.len() != parents.len() {
            return Err(Error::InvalidTree(format!("expected {} nodes, got {}", 2 * n - 1, parents.len())));
        }
        let mut nodes: Vec<Node> = lengths.iter().map(|&length| Node { parent: None, children: None, length }).collect();
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut root = None;
        for (v, p) in parents.iter().enumerate() {
            match *p {
                Some(p) if p < nodes.len() && p != v => {
                    nodes[v].parent = Some(p);
                    kids[p].push(v);
                }
                Some(p) => return Err(Error::InvalidTree(format!("node {v} has invalid parent {p}"))),
                None if root.is_none() => root = Some(v),
                None => return Err(Error::InvalidTree("more than one root".into())),
            }
        }
        let root = root.ok_or_else(|| Error::InvalidTree("no root".into()))?;
        for (v, k) in kids.into_iter().enumerate() {
            match (v < n, k.len()) {
                (true, 0) => {}
                (false, 2) => nodes[v].children = Some([k[0], k[1]]),
                (true, _) => return Err(Error::InvalidTree(format!("leaf {v} has children"))),
                (false, c) => return Err(Error::InvalidTree(format!("internal node {v} has {c} children"))),
            }
        }
        let tree = Self { labels, nodes, root };
        tree.validate()?;
        Ok(tree)
    }

    pub(crate) fn from_nodes(labels: Vec<String>, nodes: Vec<Node>, root: usize) -> Result<Self> {
        let tree = Self { labels, nodes, root };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_leaves();
        let mut labels = self.labels.clone();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTree("duplicate leaf labels".into()));
        }
        if self.nodes.len() != 2 * n - 1 || self.root >= self.nodes.len() {
            return Err(Error::InvalidTree(format!("expected {} nodes", 2 * n - 1)));
        }
        if self.root < n || self.nodes[self.root].parent.is_some() {
            return Err(Error::InvalidTree("root must be an internal node without parent".into()));
        }
        for (v, node) in self.nodes.iter().enumerate() {
            match node.children {
                None if v < n => {}
                Some(kids) if v >= n => {
                    if kids.iter().any(|&c| c >= self.nodes.len() || self.nodes[c].parent != Some(v)) || kids[0] == kids[1] {
                        return Err(Error::InvalidTree(format!("children of node {v} disagree with parent links")));
                    }
                }
                _ => return Err(Error::InvalidTree(format!("node {v} has the wrong number of children"))),
            }
        }
        let order = self.postorder();
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidTree("tree is not connected".into()));
        }
        for &v in &order {
            if v != self.root && !(self.nodes[v].length >= 0.0 && self.nodes[v].length.is_finite()) {
                return Err(Error::NegativeBranchLength(self.nodes[v].length));
            }
        }
        Ok(())
    }

    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, leaf: usize) -> &str {
        &self.labels[leaf]
    }

    pub fn leaf_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        v < self.n_leaves()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.nodes[v].parent
    }

    pub fn children(&self, v: usize) -> Option<[usize; 2]> {
        self.nodes[v].children
    }

    pub fn sibling(&self, v: usize) -> Option<usize> {
        let p = self.nodes[v].parent?;
        let [a, b] = self.nodes[p].children?;
        Some(if a == v { b } else { a })
    }

    pub fn root_children(&self) -> [usize; 2] {
        self.nodes[self.root].children.expect("root is internal")
    }

    pub fn is_root_child(&self, v: usize) -> bool {
        self.nodes[v].parent == Some(self.root)
    }

    /// Length of the branch above `v`; zero for the root.
    pub fn length(&self, v: usize) -> f64 {
        if v == self.root {
            0.0
        } else {
            self.nodes[v].length
        }
    }

    pub fn set_length(&mut self, v: usize, length: f64) -> Result<()> {
        if v == self.root {
            return Err(Error::InvalidTree("the root has no branch".into()));
        }
        if !(length >= 0.0) || !length.is_finite() {
            return Err(Error::NegativeBranchLength(length));
        }
        self.nodes[v].length = length;
        Ok(())
    }

    /// Branch ids (non-root nodes) in ascending order.
    pub fn branches(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&v| v != self.root)
    }

    pub fn tree_length(&self) -> f64 {
        self.branches().map(|v| self.nodes[v].length).sum()
    }

    /// Children before parents; children visited in stored order.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded || self.nodes[v].children.is_none() {
                out.push(v);
                continue;
            }
            if out.len() + stack.len() > self.nodes.len() {
                break;
            }
            stack.push((v, true));
            let [a, b] = self.nodes[v].children.unwrap();
            stack.push((b, false));
            stack.push((a, false));
        }
        out
    }

    pub fn preorder(&self) -> Vec<usize> {
        let mut out = self.postorder();
        out.reverse();
        out
    }

    /// Whether `v` lies in the subtree rooted at `anc` (inclusive).
    pub fn is_descendant(&self, v: usize, anc: usize) -> bool {
        let mut cur = Some(v);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }

    /// Path from `v` up to and including the root.
    pub fn path_to_root(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut cur = v;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn depth(&self, v: usize) -> usize {
        self.path_to_root(v).len() - 1
    }

    /// Leaves below each node, indexed by node id.
    pub fn leaf_sets(&self) -> Vec<LeafSet> {
        let n = self.n_leaves();
        let mut sets = vec![LeafSet::empty(n); self.nodes.len()];
        for v in self.postorder() {
            if v < n {
                sets[v].insert(v);
            } else {
                let [a, b] = self.nodes[v].children.unwrap();
                let merged = sets[a].union(&sets[b]);
                sets[v] = merged;
            }
        }
        sets
    }

    /// Renumbers leaves to follow `labels`, which must be a permutation of
    /// this tree's labels.
    pub fn relabeled(&self, labels: &[String]) -> Result<Self> {
        let n = self.n_leaves();
        if labels.len() != n {
            return Err(Error::InvalidTree("leaf sets differ".into()));
        }
        let mut map = vec![0usize; self.nodes.len()];
        for (old, l) in self.labels.iter().enumerate() {
            map[old] = labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::InvalidTree(format!("label {l} missing from the reference set")))?;
        }
        for v in n..self.nodes.len() {
            map[v] = v;
        }
        let mut nodes = self.nodes.clone();
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[map[old]] = Node {
                parent: node.parent.map(|p| map[p]),
                children: node.children.map(|[a, b]| [map[a], map[b]]),
                length: node.length,
            };
        }
        Self::from_nodes(labels.to_vec(), nodes, self.root)
    }

    /// Moves the root onto the branch above `v`, leaving `frac` of that
    /// branch below the new root. The two branches at the old root merge.
    /// Node ids are preserved; the root keeps its id.
    pub fn rerooted(&self, v: usize, frac: f64) -> Result<Self> {
        if v == self.root || v >= self.nodes.len() {
            return Err(Error::InvalidTree(format!("cannot reroot above node {v}")));
        }
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::InvalidParameter(format!("reroot fraction {frac}")));
        }
        let [l, r] = self.root_children();
        // undirected adjacency without the old root
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nodes.len()];
        for u in self.branches() {
            let p = self.nodes[u].parent.unwrap();
            if p != self.root {
                adj[u].push((p, self.nodes[u].length));
                adj[p].push((u, self.nodes[u].length));
            }
        }
        let joined = self.nodes[l].length + self.nodes[r].length;
        adj[l].push((r, joined));
        adj[r].push((l, joined));

        let above = if self.nodes[v].parent == Some(self.root) {
            if v == l {
                r
            } else {
                l
            }
        } else {
            self.nodes[v].parent.unwrap()
        };
        let edge_len = adj[v].iter().find(|e| e.0 == above).map(|e| e.1).unwrap();
        let mut nodes: Vec<Node> = vec![Node { parent: None, children: None, length: 0.0 }; self.nodes.len()];
        let root = self.root;
        nodes[root].children = Some([v, above]);
        nodes[v].parent = Some(root);
        nodes[v].length = frac * edge_len;
        nodes[above].parent = Some(root);
        nodes[above].length = (1.0 - frac) * edge_len;
        let mut stack = vec![(v, above), (above, v)];
        while let Some((u, from)) = stack.pop() {
            let kids: Vec<(usize, f64)> = adj[u].iter().copied().filter(|e| e.0 != from).collect();
            match kids.len() {
                0 => {}
                2 => {
                    nodes[u].children = Some([kids[0].0, kids[1].0]);
                    for &(k, len) in &kids {
                        nodes[k].parent = Some(u);
                        nodes[k].length = len;
                        stack.push((k, u));
                    }
                }
                c => return Err(Error::InvalidTree(format!("node {u} has degree {} after rerooting", c + 1))),
            }
        }
        Self::from_nodes(self.labels.clone(), nodes, root)
    }

    /// Canonical form for unrooted use: root on the pendant edge of leaf 0,
    /// leaf 0 first, its sibling branch of length zero.
    pub fn canonical_unrooted(&self) -> Result<Self> {
        let t = self.rerooted(0, 1.0)?;
        let mut t = t;
        let root = t.root;
        let [a, b] = t.root_children();
        if a != 0 {
            t.nodes[root].children = Some([b, a]);
        }
        Ok(t)
    }

    pub fn is_canonical_unrooted(&self) -> bool {
        let [a, b] = self.root_children();
        a == 0 && self.nodes[b].length == 0.0
    }

    /// Uniform random rooted topology by stepwise addition, with branch
    /// lengths drawn from Exp(rate).
    pub fn random_rooted<R: Rng + ?Sized>(labels: Vec<String>, rate: f64, rng: &mut R) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::InvalidTree("need at least two leaves".into()));
        }
        let mut parents: Vec<Option<usize>> = vec![None; 2 * n - 1];
        parents[0] = Some(n);
        parents[1] = Some(n);
        let mut root = n;
        let mut present = vec![0usize, 1, n];
        for k in 2..n {
            let new_internal = n + k - 1;
            // attach above any present node, the root included
            let target = present[rng.random_range(0..present.len())];
            parents[new_internal] = parents[target];
            parents[target] = Some(new_internal);
            parents[k] = Some(new_internal);
            if target == root {
                root = new_internal;
            }
            present.push(k);
            present.push(new_internal);
        }
        let _ = root;
        let lengths = draw_lengths(2 * n - 1, rate, rng)?;
        let mut t = Self::from_parents(labels, &parents, &lengths)?;
        let r = t.root;
        t.nodes[r].length = 0.0;
        Ok(t)
    }

    /// Uniform random unrooted topology in canonical form.
    pub fn random_unrooted<R: Rng + ?Sized>(labels: Vec<String>, rate: f64, rng: &mut R) -> Result<Self> {
        let n = labels.len();
        if n < 3 {
            return Err(Error::InvalidTree("need at least three leaves".into()));
        }
        // root at 2n-2 with children leaf 0 and X = n; X holds leaves 1, 2
        let mut parents: Vec<Option<usize>> = vec![None; 2 * n - 1];
        let root = 2 * n - 2;
        parents[0] = Some(root);
        parents[n] = Some(root);
        parents[1] = Some(n);
        parents[2] = Some(n);
        // the unrooted edges are every non-root node except the pinned one
        let mut pinned = n;
        let mut edges = vec![1usize, 2, 0];
        for k in 3..n {
            let new_internal = n + k - 2;
            let e = edges[rng.random_range(0..edges.len())];
            let target = if e == 0 { pinned } else { e };
            parents[new_internal] = parents[target];
            parents[target] = Some(new_internal);
            parents[k] = Some(new_internal);
            if e == 0 {
                // leaf 0's pendant edge: the new node becomes the pinned sibling
                edges.push(pinned);
                pinned = new_internal;
            } else {
                edges.push(new_internal);
            }
            edges.push(k);
        }
        let mut lengths = draw_lengths(2 * n - 1, rate, rng)?;
        lengths[root] = 0.0;
        lengths[pinned] = 0.0;
        let mut t = Self::from_parents(labels, &parents, &lengths)?;
        t.nodes[root].children = Some([0, pinned]);
        Ok(t)
    }
}

fn draw_lengths<R: Rng + ?Sized>(count: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    let exp = Exp::new(rate).map_err(|e| Error::InvalidParameter(format!("branch-length rate: {e}")))?;
    Ok((0..count).map(|_| exp.sample(rng)).collect())
}

/// Posterior tree samples sharing one leaf labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSample {
    labels: Vec<String>,
    trees: Vec<Phylogeny>,
    iterations: Vec<u64>,
}

impl TreeSample {
    pub fn new(trees: Vec<Phylogeny>, iterations: Vec<u64>) -> Result<Self> {
        let first = trees.first().ok_or_else(|| Error::InvalidTree("empty tree sample".into()))?;
        if iterations.len() != trees.len() {
            return Err(Error::Dimension("iteration indices do not match trees".into()));
        }
        let labels = first.labels().to_vec();
        let trees = trees.iter().map(|t| t.relabeled(&labels)).collect::<Result<Vec<_>>>()?;
        Ok(Self { labels, trees, iterations })
    }

    /// Samples numbered 0, 1, 2, ...
    pub fn from_trees(trees: Vec<Phylogeny>) -> Result<Self> {
        let iterations = (0..trees.len() as u64).collect();
        Self::new(trees, iterations)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn trees(&self) -> &[Phylogeny] {
        &self.trees
    }

    pub fn iterations(&self) -> &[u64] {
        &self.iterations
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

/// All rooted binary topologies on `labels` (unit branch lengths), by
/// exhaustive stepwise addition. (2n−3)!! trees; intended for n ≤ 8.
pub fn enumerate_rooted(labels: &[String]) -> Vec<Phylogeny> {
    let n = labels.len();
    let mut out = Vec::new();
    let mut parents: Vec<Option<usize>> = vec![None; 2 * n - 1];
    parents[0] = Some(n);
    parents[1] = Some(n);
    fn rec(k: usize, n: usize, parents: &mut Vec<Option<usize>>, labels: &[String], out: &mut Vec<Phylogeny>) {
        if k == n {
            let lengths = vec![1.0; 2 * n - 1];
            out.push(Phylogeny::from_parents(labels.to_vec(), parents, &lengths).expect("valid enumeration"));
            return;
        }
        let new_internal = n + k - 1;
        let present: Vec<usize> = (0..k).chain(n..new_internal).collect();
        for target in present {
            let saved = parents[target];
            parents[new_internal] = saved;
            parents[target] = Some(new_internal);
            parents[k] = Some(new_internal);
            rec(k + 1, n, parents, labels, out);
            parents[target] = saved;
            parents[new_internal] = None;
            parents[k] = None;
        }
    }
    rec(2, n, &mut parents, labels, &mut out);
    out
}

/// All unrooted binary topologies on `labels`, in canonical form.
pub fn enumerate_unrooted(labels: &[String]) -> Vec<Phylogeny> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for t in enumerate_rooted(labels) {
        let c = t.canonical_unrooted().expect("binary tree");
        let key: Vec<Split> = splits_of(&c, false).into_iter().filter(|s| !s.is_trivial()).collect();
        if seen.insert(key) {
            out.push(c);
        }
    }
    out
}
