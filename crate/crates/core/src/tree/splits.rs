//! Leaf bipartitions, clades, consensus summaries and topology priors.

use std::collections::BTreeMap;
use std::fmt;

use super::{Phylogeny, TreeSample};
use crate::error::{Error, Result};

/// Bitset over leaf indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafSet {
    n: usize,
    words: Vec<u64>,
}

impl LeafSet {
    pub fn empty(n: usize) -> Self {
        Self { n, words: vec![0; n.div_ceil(64).max(1)] }
    }

    pub fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(n: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n);
        for i in idx {
            s.insert(i);
        }
        s
    }

    pub fn universe(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "leaf {i} out of range");
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self { n: self.n, words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect() }
    }

    pub fn complement(&self) -> Self {
        let mut out = Self::full(self.n);
        for (w, s) in out.words.iter_mut().zip(&self.words) {
            *w &= !s;
        }
        out
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.contains(i))
    }
}

/// A leaf bipartition, stored as one side. Unrooted splits keep the side
/// without leaf 0; clades keep the descendant side.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Split {
    side: LeafSet,
    clade: bool,
}

impl Split {
    pub fn unrooted(side: LeafSet) -> Self {
        if side.contains(0) {
            Self { side: side.complement(), clade: false }
        } else {
            Self { side, clade: false }
        }
    }

    pub fn clade(side: LeafSet) -> Self {
        Self { side, clade: true }
    }

    /// Root-split convention: the smaller side, ties broken towards the side
    /// without leaf 0.
    pub fn smaller_side(side: LeafSet) -> Self {
        let other = side.complement();
        let pick = match side.len().cmp(&other.len()) {
            std::cmp::Ordering::Less => side,
            std::cmp::Ordering::Greater => other,
            std::cmp::Ordering::Equal => {
                if side.contains(0) {
                    other
                } else {
                    side
                }
            }
        };
        Self { side: pick, clade: false }
    }

    pub fn side(&self) -> &LeafSet {
        &self.side
    }

    pub fn is_clade(&self) -> bool {
        self.clade
    }

    /// Single leaves and the whole leaf set are trivial; for unrooted splits
    /// so is the complement of a single leaf.
    pub fn is_trivial(&self) -> bool {
        let (k, n) = (self.side.len(), self.side.universe());
        if self.clade {
            k <= 1 || k == n
        } else {
            k <= 1 || k + 1 >= n
        }
    }

    pub fn display<'a>(&'a self, labels: &'a [String]) -> SplitDisplay<'a> {
        SplitDisplay { split: self, labels }
    }
}

pub struct SplitDisplay<'a> {
    split: &'a Split,
    labels: &'a [String],
}

impl fmt::Display for SplitDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.split.side.indices().map(|i| self.labels[i].as_str()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Splits of every branch (unrooted) or clades of every non-root vertex
/// (rooted), trivial ones included.
pub fn splits_of(tree: &Phylogeny, rooted: bool) -> Vec<Split> {
    if rooted {
        let sets = tree.leaf_sets();
        let mut out: Vec<Split> = tree.branches().map(|v| Split::clade(sets[v].clone())).collect();
        out.sort();
        out
    } else {
        unrooted_lengths(tree).into_keys().collect()
    }
}

/// Unrooted splits with branch lengths; the two branches at the root form
/// one edge.
pub(crate) fn unrooted_lengths(tree: &Phylogeny) -> BTreeMap<Split, f64> {
    let sets = tree.leaf_sets();
    let mut out = BTreeMap::new();
    for v in tree.branches() {
        *out.entry(Split::unrooted(sets[v].clone())).or_insert(0.0) += tree.length(v);
    }
    out
}

fn clade_lengths(tree: &Phylogeny) -> BTreeMap<Split, f64> {
    let sets = tree.leaf_sets();
    tree.branches().map(|v| (Split::clade(sets[v].clone()), tree.length(v))).collect()
}

/// Multifurcating summary tree with per-clade support and mean length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTree {
    labels: Vec<String>,
    rooted: bool,
    /// (clade, support, mean length), sorted by clade.
    clades: Vec<(Split, f64, f64)>,
}

impl ConsensusTree {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_rooted(&self) -> bool {
        self.rooted
    }

    /// Included clades with support and mean branch length.
    pub fn clades(&self) -> &[(Split, f64, f64)] {
        &self.clades
    }

    pub fn support(&self, split: &Split) -> Option<f64> {
        self.clades.iter().find(|c| &c.0 == split).map(|c| c.1)
    }

    /// Nontrivial included splits.
    pub fn nontrivial(&self) -> Vec<&Split> {
        self.clades.iter().filter(|c| !c.0.is_trivial()).map(|c| &c.0).collect()
    }

    /// Newick with internal support labels formatted to three decimals.
    /// Unrooted summaries are written with a multifurcation next to leaf 0.
    pub fn to_newick(&self) -> String {
        let n = self.labels.len();
        let nodes: Vec<(LeafSet, f64, f64)> = self
            .clades
            .iter()
            .map(|(s, sup, len)| {
                // the unrooted split of leaf 0's pendant edge is stored as its complement
                if !self.rooted && s.side().len() + 1 == n {
                    (LeafSet::from_indices(n, [0]), *sup, *len)
                } else {
                    (s.side().clone(), *sup, *len)
                }
            })
            .collect();
        let top = nodes.len();
        // parent of each clade is the smallest strictly larger clade containing it
        let mut order: Vec<usize> = (0..top).collect();
        order.sort_by_key(|&i| nodes[i].0.len());
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); top + 1];
        for (pos, &i) in order.iter().enumerate() {
            let parent = order[pos + 1..]
                .iter()
                .copied()
                .find(|&j| nodes[i].0.len() < nodes[j].0.len() && nodes[i].0.is_subset(&nodes[j].0))
                .unwrap_or(top);
            children[parent].push(i);
        }
        for c in children.iter_mut() {
            c.sort_by_key(|&i| nodes[i].0.indices().next().unwrap_or(n));
        }
        let mut out = String::new();
        self.write_clade(top, &nodes, &children, &mut out);
        out.push(';');
        out
    }

    fn write_clade(&self, i: usize, nodes: &[(LeafSet, f64, f64)], children: &[Vec<usize>], out: &mut String) {
        let top = nodes.len();
        let kids = &children[i];
        if i != top && kids.is_empty() {
            let leaf = nodes[i].0.indices().next().expect("nonempty clade");
            out.push_str(&self.labels[leaf]);
        } else {
            out.push('(');
            for (k, &c) in kids.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                self.write_clade(c, nodes, children, out);
            }
            out.push(')');
            if i != top {
                out.push_str(&format!("{:.3}", nodes[i].1));
            }
        }
        if i != top {
            out.push_str(&format!(":{}", nodes[i].2));
        }
    }
}

/// Majority-rule consensus: exactly the splits (or clades) seen in more than
/// half of the samples. Leaves are always included.
pub fn majority_rule_consensus(samples: &TreeSample, rooted: bool) -> Result<ConsensusTree> {
    let m = samples.len();
    if m == 0 {
        return Err(Error::InvalidTree("empty tree sample".into()));
    }
    let mut tally: BTreeMap<Split, (usize, f64)> = BTreeMap::new();
    for t in samples.trees() {
        let lens = if rooted { clade_lengths(t) } else { unrooted_lengths(t) };
        for (s, l) in lens {
            let e = tally.entry(s).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += l;
        }
    }
    let clades = tally
        .into_iter()
        .filter(|(_, (c, _))| 2 * c > m)
        .map(|(s, (c, l))| (s, c as f64 / m as f64, l / c as f64))
        .collect();
    Ok(ConsensusTree { labels: samples.labels().to_vec(), rooted, clades })
}

/// Relative frequency of each root split, most frequent first.
pub fn root_split_frequencies(samples: &TreeSample) -> Vec<(Split, f64)> {
    let m = samples.len() as f64;
    let mut counts: BTreeMap<Split, usize> = BTreeMap::new();
    for t in samples.trees() {
        let sets = t.leaf_sets();
        let [a, _] = t.root_children();
        *counts.entry(Split::smaller_side(sets[a].clone())).or_insert(0) += 1;
    }
    let mut out: Vec<(Split, f64)> = counts.into_iter().map(|(s, c)| (s, c as f64 / m)).collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    out
}

/// Yule prior on labelled rooted topologies:
/// P(τ) = 2^{n−1} / (n! · Π_v s_v), s_v = internal vertices in v's subtree.
pub fn yule_log_prior(tree: &Phylogeny) -> f64 {
    let n = tree.n_leaves();
    let mut internal_below = vec![0usize; tree.n_nodes()];
    let mut log_p = (n as f64 - 1.0) * std::f64::consts::LN_2 - ln_factorial(n);
    for v in tree.postorder() {
        if let Some([a, b]) = tree.children(v) {
            internal_below[v] = 1 + internal_below[a] + internal_below[b];
            log_p -= (internal_below[v] as f64).ln();
        }
    }
    log_p
}

/// −ln (2n−3)!!, uniform over rooted topologies.
pub fn uniform_rooted_log_prior(n: usize) -> f64 {
    -ln_double_factorial(2 * n as i64 - 3)
}

/// −ln (2n−5)!!, uniform over unrooted topologies.
pub fn uniform_unrooted_log_prior(n: usize) -> f64 {
    -ln_double_factorial(2 * n as i64 - 5)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_double_factorial(k: i64) -> f64 {
    let mut acc = 0.0;
    let mut i = k;
    while i > 1 {
        acc += (i as f64).ln();
        i -= 2;
    }
    acc
}
