//! Cached pruning over all patterns and (c, d) categories.
//!
//! Every node keeps two buffers for its transition matrices and partial
//! likelihoods. An evaluation writes into the spare buffer of each node it
//! recomputes and flips to it; `reject` flips those nodes back, `accept`
//! forgets them. A node's partials depend only on its children's partials
//! and matrices, so partial and full recomputation agree bit for bit.

use super::alignment::{state_mask, PatternTable};
use crate::error::{Error, Result};
use crate::quash::eigenvalue_map_real;
use crate::ratemat::{Composition, ReversibleEigen};
use crate::site_effects::EffectGrid;
use crate::tree::Phylogeny;

const K: usize = 4;
const KK: usize = K * K;
/// Partials whose largest entry falls below 2^-500 (about 3e-151) are
/// rescaled by an exact power of two.
const SCALE_EXPONENT: i32 = 500;

/// Baseline rate matrices per branch and the root distribution.
#[derive(Debug, Clone)]
pub struct SubstitutionModel {
    eigens: Vec<ReversibleEigen<f64>>,
    branch_eigen: Vec<usize>,
    root_dist: Vec<f64>,
}

impl SubstitutionModel {
    /// `branch_eigen[v]` selects the baseline for the branch above node `v`;
    /// the root's entry is ignored.
    pub fn new(eigens: Vec<ReversibleEigen<f64>>, branch_eigen: Vec<usize>, root_dist: Composition<f64>) -> Result<Self> {
        if eigens.is_empty() || branch_eigen.iter().any(|&i| i >= eigens.len()) {
            return Err(Error::Dimension("branch refers to a missing rate matrix".into()));
        }
        if root_dist.dim() != K || eigens.iter().any(|e| e.eigenvalues().len() != K) {
            return Err(Error::Dimension("nucleotide models need four states".into()));
        }
        Ok(Self { eigens, branch_eigen, root_dist: root_dist.probs().to_vec() })
    }

    /// One reversible baseline on every branch, rooted at its stationary law.
    pub fn stationary(eigen: ReversibleEigen<f64>, n_nodes: usize) -> Result<Self> {
        let pi = eigen.composition().clone();
        Self::new(vec![eigen], vec![0; n_nodes], pi)
    }

    pub fn eigen_for(&self, v: usize) -> &ReversibleEigen<f64> {
        &self.eigens[self.branch_eigen[v]]
    }

    pub fn root_dist(&self) -> &[f64] {
        &self.root_dist
    }

    pub fn n_nodes(&self) -> usize {
        self.branch_eigen.len()
    }

    /// Transition matrix on the branch above `v` for category (c, d),
    /// row-major into `out`.
    pub fn fill_transition(&self, v: usize, ell: f64, c: f64, d: f64, out: &mut [f64]) {
        self.eigen_for(v).fill_transition(ell, |l| eigenvalue_map_real(l, c, d), out);
    }
}

#[derive(Debug, Clone)]
pub struct LikelihoodEngine {
    n_leaves: usize,
    n_nodes: usize,
    n_pat: usize,
    n_cat: usize,
    weights: Vec<f64>,
    /// masks[leaf][pattern]
    masks: Vec<Vec<u8>>,
    pmat: Vec<[Vec<f64>; 2]>,
    partial: Vec<[Vec<f64>; 2]>,
    scale: Vec<[Vec<i32>; 2]>,
    cur_p: Vec<u8>,
    cur_l: Vec<u8>,
    touched_p: Vec<usize>,
    touched_l: Vec<usize>,
    site_log: Vec<f64>,
    log_lik: f64,
    saved: Option<(f64, Vec<f64>)>,
    leaf_table: Vec<f64>,
    ready: bool,
}

impl LikelihoodEngine {
    /// Patterns must list taxa in the tree's leaf order.
    pub fn new(patterns: &PatternTable, labels: &[String], n_categories: usize) -> Result<Self> {
        if patterns.names() != labels {
            return Err(Error::Alignment("pattern rows do not follow the tree's leaf order".into()));
        }
        if n_categories == 0 {
            return Err(Error::InvalidParameter("need at least one category".into()));
        }
        let n = labels.len();
        let n_nodes = 2 * n - 1;
        let n_pat = patterns.n_patterns();
        let mut masks = vec![vec![0u8; n_pat]; n];
        for p in 0..n_pat {
            for (leaf, &c) in patterns.pattern(p).iter().enumerate() {
                masks[leaf][p] = state_mask(c).ok_or_else(|| Error::Alignment(format!("invalid character {c}")))?;
            }
        }
        let block = n_pat * n_categories * K;
        Ok(Self {
            n_leaves: n,
            n_nodes,
            n_pat,
            n_cat: n_categories,
            weights: patterns.weights().to_vec(),
            masks,
            pmat: (0..n_nodes).map(|_| [vec![0.0; n_categories * KK], vec![0.0; n_categories * KK]]).collect(),
            partial: (0..n_nodes)
                .map(|v| if v < n { [Vec::new(), Vec::new()] } else { [vec![0.0; block], vec![0.0; block]] })
                .collect(),
            scale: (0..n_nodes).map(|_| [vec![0; n_pat], vec![0; n_pat]]).collect(),
            cur_p: vec![0; n_nodes],
            cur_l: vec![0; n_nodes],
            touched_p: Vec::new(),
            touched_l: Vec::new(),
            site_log: vec![0.0; n_pat],
            log_lik: f64::NAN,
            saved: None,
            leaf_table: vec![0.0; n_categories * 16 * K],
            ready: false,
        })
    }

    pub fn n_categories(&self) -> usize {
        self.n_cat
    }

    pub fn n_patterns(&self) -> usize {
        self.n_pat
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_lik
    }

    /// Per-pattern log-likelihoods of the current state.
    pub fn site_log_likelihoods(&self) -> &[f64] {
        &self.site_log
    }

    /// First pattern with zero probability under every category, if any.
    pub fn zero_pattern(&self) -> Option<usize> {
        self.site_log.iter().position(|&x| x == f64::NEG_INFINITY)
    }

    fn check(&self, tree: &Phylogeny, model: &SubstitutionModel, grid: &EffectGrid) -> Result<()> {
        if tree.n_leaves() != self.n_leaves || model.n_nodes() != self.n_nodes {
            return Err(Error::Dimension("tree, model and data sizes differ".into()));
        }
        if grid.len() != self.n_cat {
            return Err(Error::Dimension(format!("grid has {} categories, engine {}", grid.len(), self.n_cat)));
        }
        Ok(())
    }

    fn begin(&mut self) {
        if self.saved.is_none() {
            self.saved = Some((self.log_lik, self.site_log.clone()));
        }
    }

    /// Recomputes everything.
    pub fn evaluate_full(&mut self, tree: &Phylogeny, model: &SubstitutionModel, grid: &EffectGrid) -> Result<f64> {
        self.check(tree, model, grid)?;
        self.begin();
        let order = tree.postorder();
        for &v in &order {
            if v != tree.root() {
                self.compute_pmat(v, tree.length(v), model, grid);
            }
        }
        for &v in &order {
            if v >= self.n_leaves {
                self.compute_partial(tree, v);
            }
        }
        self.ready = true;
        Ok(self.finish(tree, model))
    }

    /// Recomputes the matrices on the branches above `nodes` and the
    /// partials on their paths to the root.
    pub fn evaluate_branches(
        &mut self,
        tree: &Phylogeny,
        model: &SubstitutionModel,
        grid: &EffectGrid,
        nodes: &[usize],
    ) -> Result<f64> {
        if !self.ready {
            return self.evaluate_full(tree, model, grid);
        }
        self.check(tree, model, grid)?;
        self.begin();
        let mut dirty = vec![false; self.n_nodes];
        for &v in nodes {
            if v == tree.root() {
                continue;
            }
            self.compute_pmat(v, tree.length(v), model, grid);
            let mut cur = tree.parent(v);
            while let Some(p) = cur {
                if dirty[p] {
                    break;
                }
                dirty[p] = true;
                cur = tree.parent(p);
            }
        }
        for v in tree.postorder() {
            if dirty[v] {
                self.compute_partial(tree, v);
            }
        }
        Ok(self.finish(tree, model))
    }

    /// Keeps the state produced since the last accept/reject.
    pub fn accept(&mut self) {
        self.touched_p.clear();
        self.touched_l.clear();
        self.saved = None;
    }

    /// Restores the state before the last evaluations.
    pub fn reject(&mut self) {
        for &v in &self.touched_p {
            self.cur_p[v] ^= 1;
        }
        for &v in &self.touched_l {
            self.cur_l[v] ^= 1;
        }
        self.touched_p.clear();
        self.touched_l.clear();
        if let Some((ll, sites)) = self.saved.take() {
            self.log_lik = ll;
            self.site_log = sites;
        }
    }

    fn compute_pmat(&mut self, v: usize, ell: f64, model: &SubstitutionModel, grid: &EffectGrid) {
        let buf = if self.touched_p.contains(&v) {
            self.cur_p[v] as usize
        } else {
            self.touched_p.push(v);
            self.cur_p[v] ^= 1;
            self.cur_p[v] as usize
        };
        let out = &mut self.pmat[v][buf];
        for (j, (c, d)) in grid.categories().enumerate() {
            model.fill_transition(v, ell, c, d, &mut out[j * KK..(j + 1) * KK]);
        }
    }

    fn fill_leaf_table(&mut self, leaf: usize) {
        let p = &self.pmat[leaf][self.cur_p[leaf] as usize];
        for j in 0..self.n_cat {
            let pm = &p[j * KK..(j + 1) * KK];
            for mask in 1..16usize {
                for s in 0..K {
                    let mut acc = 0.0;
                    for t in 0..K {
                        if mask >> t & 1 == 1 {
                            acc += pm[s * K + t];
                        }
                    }
                    self.leaf_table[(j * 16 + mask) * K + s] = acc;
                }
            }
        }
    }

    fn compute_partial(&mut self, tree: &Phylogeny, v: usize) {
        let buf = if self.touched_l.contains(&v) {
            self.cur_l[v] as usize
        } else {
            self.touched_l.push(v);
            self.cur_l[v] ^= 1;
            self.cur_l[v] as usize
        };
        let [a, b] = tree.children(v).expect("internal node");
        let mut out = std::mem::take(&mut self.partial[v][buf]);
        let mut sc = std::mem::take(&mut self.scale[v][buf]);
        out.iter_mut().for_each(|x| *x = 1.0);
        sc.iter_mut().for_each(|x| *x = 0);
        for child in [a, b] {
            let pbuf = self.cur_p[child] as usize;
            if child < self.n_leaves {
                self.fill_leaf_table(child);
                let masks = &self.masks[child];
                for p in 0..self.n_pat {
                    let m = masks[p] as usize;
                    for j in 0..self.n_cat {
                        let row = &self.leaf_table[(j * 16 + m) * K..(j * 16 + m + 1) * K];
                        let o = &mut out[(p * self.n_cat + j) * K..(p * self.n_cat + j + 1) * K];
                        for s in 0..K {
                            o[s] *= row[s];
                        }
                    }
                }
            } else {
                let lbuf = self.cur_l[child] as usize;
                let pm = &self.pmat[child][pbuf];
                let cl = &self.partial[child][lbuf];
                let cs = &self.scale[child][lbuf];
                for p in 0..self.n_pat {
                    sc[p] += cs[p];
                    for j in 0..self.n_cat {
                        let m = &pm[j * KK..(j + 1) * KK];
                        let base = (p * self.n_cat + j) * K;
                        let x = &cl[base..base + K];
                        let o = &mut out[base..base + K];
                        for s in 0..K {
                            let r = &m[s * K..s * K + K];
                            o[s] *= r[0] * x[0] + r[1] * x[1] + r[2] * x[2] + r[3] * x[3];
                        }
                    }
                }
            }
        }
        let stride = self.n_cat * K;
        let tiny = 2f64.powi(-SCALE_EXPONENT);
        for p in 0..self.n_pat {
            let block = &mut out[p * stride..(p + 1) * stride];
            let max = block.iter().fold(0.0f64, |m, &x| m.max(x));
            if max > 0.0 && max < tiny {
                // exact power of two lifting the maximum into [1, 2)
                let e = -(max.log2().floor() as i32);
                let f = 2f64.powi(e);
                block.iter_mut().for_each(|x| *x *= f);
                sc[p] += e;
            }
        }
        self.partial[v][buf] = out;
        self.scale[v][buf] = sc;
    }

    fn finish(&mut self, tree: &Phylogeny, model: &SubstitutionModel) -> f64 {
        let root = tree.root();
        let buf = self.cur_l[root] as usize;
        let part = &self.partial[root][buf];
        let sc = &self.scale[root][buf];
        let pi = model.root_dist();
        let w = 1.0 / self.n_cat as f64;
        let mut total = 0.0;
        for p in 0..self.n_pat {
            let mut site = 0.0;
            for j in 0..self.n_cat {
                let x = &part[(p * self.n_cat + j) * K..(p * self.n_cat + j + 1) * K];
                site += pi[0] * x[0] + pi[1] * x[1] + pi[2] * x[2] + pi[3] * x[3];
            }
            let ll = if site > 0.0 {
                (site * w).ln() - sc[p] as f64 * std::f64::consts::LN_2
            } else {
                f64::NEG_INFINITY
            };
            self.site_log[p] = ll;
            total += self.weights[p] * ll;
        }
        self.log_lik = total;
        total
    }
}

/// Mixture log-likelihood over the category grid, computed from scratch.
pub fn grid_log_likelihood(
    patterns: &PatternTable,
    tree: &Phylogeny,
    model: &SubstitutionModel,
    grid: &EffectGrid,
) -> Result<f64> {
    let mut engine = LikelihoodEngine::new(patterns, tree.labels(), grid.len())?;
    engine.evaluate_full(tree, model, grid)
}
