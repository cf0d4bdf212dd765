//! The six model families: parameter bundles, per-branch baselines, grids
//! and priors.
//!
//! Compositions in the non-stationary families are stored per node. The
//! entry at the root is π₀, which both branches at the root use (they form
//! one edge of the unrooted tree); the entries of the two root children are
//! carried along but ignored.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::diagnostics::{distinct_char_stats, PredictiveStats};
use crate::error::{Error, Result};
use crate::likelihood::{grid_log_likelihood, simulate_alignment, PatternTable, SubstitutionModel};
use crate::quash::{bounds, joint_bounds, QuashBounds};
use crate::ratemat::{build_tn93, Composition, RateMatrix, ReversibleEigen};
use crate::site_effects::{build_effect_grid, gamma_rate_quantiles, EffectGrid, QuadDistribution, RateDistribution};
use crate::tree::{uniform_rooted_log_prior, uniform_unrooted_log_prior, yule_log_prior, Phylogeny};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    S1,
    S2,
    S3,
    NS1,
    NS2,
    NS3,
}

impl Family {
    pub const ALL: [Family; 6] = [Family::S1, Family::S2, Family::S3, Family::NS1, Family::NS2, Family::NS3];

    pub fn is_stationary(self) -> bool {
        matches!(self, Family::S1 | Family::S2 | Family::S3)
    }

    /// Gamma-distributed rates (LASH and QuASH variants).
    pub fn has_alpha(self) -> bool {
        !matches!(self, Family::S1 | Family::NS1)
    }

    /// Quadratic coefficients (QuASH variants).
    pub fn has_beta(self) -> bool {
        matches!(self, Family::S3 | Family::NS3)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::S1 => "s1",
            Family::S2 => "s2",
            Family::S3 => "s3",
            Family::NS1 => "ns1",
            Family::NS2 => "ns2",
            Family::NS3 => "ns3",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyPrior {
    /// Uniform over unrooted trees for stationary families, Yule otherwise.
    #[default]
    Auto,
    Uniform,
    Yule,
}

/// Hyperparameters. Gamma priors are (shape, rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub rho_shape: f64,
    pub rho_rate: f64,
    pub dirichlet: [f64; 4],
    pub branch_rate: f64,
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub beta_shape: f64,
    pub beta_rate: f64,
    /// Autoregressive coefficient of the composition prior.
    pub ar_coefficient: f64,
    /// Conditional variance of the composition prior.
    pub ar_variance: f64,
    pub topology: TopologyPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            rho_shape: 1.0,
            rho_rate: 1.0,
            dirichlet: [1.0; 4],
            branch_rate: 10.0,
            alpha_shape: 10.0,
            alpha_rate: 10.0,
            beta_shape: 1.0,
            beta_rate: 1.0,
            ar_coefficient: 0.94,
            ar_variance: 0.31,
            topology: TopologyPrior::Auto,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho_shape", self.rho_shape),
            ("rho_rate", self.rho_rate),
            ("branch_rate", self.branch_rate),
            ("alpha_shape", self.alpha_shape),
            ("alpha_rate", self.alpha_rate),
            ("beta_shape", self.beta_shape),
            ("beta_rate", self.beta_rate),
            ("ar_variance", self.ar_variance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dirichlet.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("Dirichlet parameters must be positive".into()));
        }
        if !(self.ar_coefficient > 0.0 && self.ar_coefficient < 1.0) {
            return Err(Error::Config(format!("ar_coefficient must lie in (0, 1), got {}", self.ar_coefficient)));
        }
        Ok(())
    }

    pub fn topology_for(&self, family: Family) -> TopologyPrior {
        match self.topology {
            TopologyPrior::Auto if family.is_stationary() => TopologyPrior::Uniform,
            TopologyPrior::Auto => TopologyPrior::Yule,
            t => t,
        }
    }
}

pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn dirichlet_log_density(pi: &[f64], conc: &[f64]) -> f64 {
    if pi.iter().any(|&p| !(p > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let total: f64 = conc.iter().sum();
    ln_gamma(total) + pi.iter().zip(conc).map(|(&p, &a)| (a - 1.0) * p.ln() - ln_gamma(a)).sum::<f64>()
}

/// Additive log-ratios against the last component.
pub fn alr(pi: &[f64]) -> Vec<f64> {
    let last = pi[pi.len() - 1].ln();
    pi[..pi.len() - 1].iter().map(|p| p.ln() - last).collect()
}

pub fn alr_inverse(x: &[f64]) -> Composition<f64> {
    let m = x.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut w: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    w.push((-m).exp());
    let s: f64 = w.iter().sum();
    Composition::new(w.into_iter().map(|v| v / s).collect()).expect("softmax lies on the simplex")
}

fn normal_log_density_iso(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let ss: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * ss / var
}

/// Conditional density of a branch composition given its parent's, in the
/// measure of the first three coordinates: an isotropic normal step in
/// log-ratio space times the Jacobian 1/Π π_k.
pub fn ar_conditional_log_density(child: &[f64], parent: &[f64], a: f64, b: f64) -> f64 {
    if child.iter().any(|&p| !(p > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let mean: Vec<f64> = alr(parent).iter().map(|v| a * v).collect();
    normal_log_density_iso(&alr(child), &mean, b) - child.iter().map(|p| p.ln()).sum::<f64>()
}

/// Base law of the root composition: the stationary variance b/(1−a²).
pub fn ar_root_log_density(pi: &[f64], a: f64, b: f64) -> f64 {
    if pi.iter().any(|&p| !(p > 0.0)) {
        return f64::NEG_INFINITY;
    }
    normal_log_density_iso(&alr(pi), &[0.0; 3], b / (1.0 - a * a)) - pi.iter().map(|p| p.ln()).sum::<f64>()
}

pub fn ar_conditional_sample<R: Rng + ?Sized>(parent: &[f64], a: f64, b: f64, rng: &mut R) -> Composition<f64> {
    let sd = b.sqrt();
    let x: Vec<f64> = alr(parent).iter().map(|v| a * v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    alr_inverse(&x)
}

/// Unknowns of one model. The TN93 transversion exchangeability is fixed
/// at one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub family: Family,
    pub rho1: f64,
    pub rho2: f64,
    /// One entry for stationary families, one per node otherwise.
    pub compositions: Vec<Composition<f64>>,
    pub alpha: Option<f64>,
    pub beta_d: Option<f64>,
    pub tree: Phylogeny,
}

impl ModelState {
    pub fn new(
        family: Family,
        rho1: f64,
        rho2: f64,
        compositions: Vec<Composition<f64>>,
        alpha: Option<f64>,
        beta_d: Option<f64>,
        tree: Phylogeny,
    ) -> Result<Self> {
        let s = Self { family, rho1, rho2, compositions, alpha, beta_d, tree };
        s.validate()?;
        Ok(s)
    }

    /// Same composition on every branch.
    pub fn with_composition(
        family: Family,
        rho1: f64,
        rho2: f64,
        pi: Composition<f64>,
        alpha: Option<f64>,
        beta_d: Option<f64>,
        tree: Phylogeny,
    ) -> Result<Self> {
        let n = if family.is_stationary() { 1 } else { tree.n_nodes() };
        let tree = if family.is_stationary() && !tree.is_canonical_unrooted() { tree.canonical_unrooted()? } else { tree };
        Self::new(family, rho1, rho2, vec![pi; n], alpha, beta_d, tree)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if self.family.has_alpha() != self.alpha.is_some() {
            return Err(Error::InvalidParameter(format!("family {} and alpha presence disagree", self.family)));
        }
        if self.family.has_beta() != self.beta_d.is_some() {
            return Err(Error::InvalidParameter(format!("family {} and beta presence disagree", self.family)));
        }
        for v in self.alpha.into_iter().chain(self.beta_d) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("random-effect parameter {v}")));
            }
        }
        let want = if self.family.is_stationary() { 1 } else { self.tree.n_nodes() };
        if self.compositions.len() != want {
            return Err(Error::Dimension(format!("{} compositions, expected {want}", self.compositions.len())));
        }
        if self.compositions.iter().any(|c| c.dim() != 4) {
            return Err(Error::Dimension("compositions must have four states".into()));
        }
        if self.family.is_stationary() && !self.tree.is_canonical_unrooted() {
            return Err(Error::InvalidTree("stationary families keep the tree in canonical unrooted form".into()));
        }
        Ok(())
    }

    /// Composition governing the branch above `v` (π₀ at and next to the root).
    pub fn branch_composition(&self, v: usize) -> &Composition<f64> {
        if self.family.is_stationary() {
            &self.compositions[0]
        } else if v == self.tree.root() || self.tree.is_root_child(v) {
            &self.compositions[self.tree.root()]
        } else {
            &self.compositions[v]
        }
    }

    pub fn root_composition(&self) -> &Composition<f64> {
        self.branch_composition(self.tree.root())
    }

    /// Nodes whose composition is free: the root and every node below the
    /// root children. Just index 0 for stationary families.
    pub fn free_compositions(&self) -> Vec<usize> {
        if self.family.is_stationary() {
            return vec![0];
        }
        (0..self.tree.n_nodes()).filter(|&v| !self.tree.is_root_child(v)).collect()
    }

    /// Branches with a free length. In canonical unrooted form the sibling
    /// of leaf 0 is pinned at zero.
    pub fn free_branches(&self) -> Vec<usize> {
        let pinned = if self.family.is_stationary() { Some(self.tree.root_children()[1]) } else { None };
        self.tree.branches().filter(|&v| Some(v) != pinned).collect()
    }

    /// Baseline matrix of every branch, indexed by lower node; the root slot
    /// holds the π₀ matrix.
    pub fn branch_matrices(&self) -> Result<Vec<RateMatrix<f64>>> {
        if self.family.is_stationary() {
            let q = build_tn93(self.rho1, self.rho2, &self.compositions[0])?;
            return Ok(vec![q; self.tree.n_nodes()]);
        }
        (0..self.tree.n_nodes()).map(|v| build_tn93(self.rho1, self.rho2, self.branch_composition(v))).collect()
    }

    fn distinct_matrices(&self) -> Result<Vec<(RateMatrix<f64>, Composition<f64>)>> {
        let idx = if self.family.is_stationary() { vec![0] } else { self.free_compositions() };
        idx.into_iter()
            .map(|i| {
                let c = self.compositions[i].clone();
                Ok((build_tn93(self.rho1, self.rho2, &c)?, c))
            })
            .collect()
    }

    pub fn substitution_model(&self) -> Result<SubstitutionModel> {
        let n = self.tree.n_nodes();
        if self.family.is_stationary() {
            let q = build_tn93(self.rho1, self.rho2, &self.compositions[0])?;
            return SubstitutionModel::stationary(ReversibleEigen::new(&q, &self.compositions[0])?, n);
        }
        let free = self.free_compositions();
        let mut slot = vec![usize::MAX; n];
        for (i, &v) in free.iter().enumerate() {
            slot[v] = i;
        }
        let root = self.tree.root();
        let branch_eigen: Vec<usize> =
            (0..n).map(|v| if self.tree.is_root_child(v) { slot[root] } else { slot[v] }).collect();
        let eigens = self
            .distinct_matrices()?
            .iter()
            .map(|(q, c)| ReversibleEigen::new(q, c))
            .collect::<Result<Vec<_>>>()?;
        SubstitutionModel::new(eigens, branch_eigen, self.root_composition().clone())
    }

    /// Admissible interval for the quadratic coefficients: the intersection
    /// over every baseline in use.
    pub fn quash_bounds(&self) -> Result<QuashBounds<f64>> {
        let qs: Vec<RateMatrix<f64>> = self.distinct_matrices()?.into_iter().map(|(q, _)| q).collect();
        if qs.len() == 1 {
            bounds(&qs[0])
        } else {
            joint_bounds(&qs)
        }
    }

    /// Category grid: K_c gamma rates for LASH, K_c × K_d for QuASH.
    pub fn effect_grid(&self, kc: usize, kd: usize) -> Result<EffectGrid> {
        match (self.alpha, self.beta_d) {
            (None, _) => Ok(EffectGrid::homogeneous()),
            (Some(a), None) => EffectGrid::linear(gamma_rate_quantiles(a, kc)?),
            (Some(a), Some(b)) => {
                let quad = QuadDistribution::new(b, self.quash_bounds()?)?;
                build_effect_grid(&RateDistribution::new(a)?, &quad, kc, kd)
            }
        }
    }

    pub fn log_likelihood(&self, patterns: &PatternTable, kc: usize, kd: usize) -> Result<f64> {
        grid_log_likelihood(patterns, &self.tree, &self.substitution_model()?, &self.effect_grid(kc, kd)?)
    }

    pub fn topology_log_prior(&self, config: &PriorConfig) -> f64 {
        let n = self.tree.n_leaves();
        match config.topology_for(self.family) {
            TopologyPrior::Yule => yule_log_prior(&self.tree),
            _ if self.family.is_stationary() => uniform_unrooted_log_prior(n),
            _ => uniform_rooted_log_prior(n),
        }
    }

    /// Log prior of the compositions alone.
    pub fn composition_log_prior(&self, config: &PriorConfig) -> f64 {
        if self.family.is_stationary() {
            return dirichlet_log_density(self.compositions[0].probs(), &config.dirichlet);
        }
        let (a, b) = (config.ar_coefficient, config.ar_variance);
        let root = self.tree.root();
        let mut lp = ar_root_log_density(self.compositions[root].probs(), a, b);
        for v in self.free_compositions() {
            if v != root {
                let parent = self.tree.parent(v).expect("non-root node");
                lp += ar_conditional_log_density(
                    self.compositions[v].probs(),
                    self.branch_composition(parent).probs(),
                    a,
                    b,
                );
            }
        }
        lp
    }

    /// Sum of every prior term; −∞ off the support.
    pub fn log_prior(&self, config: &PriorConfig) -> f64 {
        let mut lp = gamma_log_density(self.rho1, config.rho_shape, config.rho_rate)
            + gamma_log_density(self.rho2, config.rho_shape, config.rho_rate);
        if let Some(a) = self.alpha {
            lp += gamma_log_density(a, config.alpha_shape, config.alpha_rate);
        }
        if let Some(b) = self.beta_d {
            lp += gamma_log_density(b, config.beta_shape, config.beta_rate);
        }
        for v in self.free_branches() {
            let l = self.tree.length(v);
            if !(l >= 0.0) || !l.is_finite() {
                return f64::NEG_INFINITY;
            }
            lp += config.branch_rate.ln() - config.branch_rate * l;
        }
        lp += self.composition_log_prior(config);
        lp + self.topology_log_prior(config)
    }

    /// A draw from the prior, topology included (stepwise addition for
    /// uniform priors, random joining for Yule).
    pub fn sample_prior<R: Rng + ?Sized>(
        family: Family,
        labels: Vec<String>,
        config: &PriorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let gamma = |shape: f64, rate: f64, rng: &mut R| -> Result<f64> {
            let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(g.sample(rng).max(f64::MIN_POSITIVE))
        };
        let rho1 = gamma(config.rho_shape, config.rho_rate, rng)?;
        let rho2 = gamma(config.rho_shape, config.rho_rate, rng)?;
        let alpha = if family.has_alpha() { Some(gamma(config.alpha_shape, config.alpha_rate, rng)?) } else { None };
        let beta_d = if family.has_beta() { Some(gamma(config.beta_shape, config.beta_rate, rng)?) } else { None };
        let tree = if family.is_stationary() {
            Phylogeny::random_unrooted(labels, config.branch_rate, rng)?
        } else if config.topology_for(family) == TopologyPrior::Yule {
            random_yule(labels, config.branch_rate, rng)?
        } else {
            Phylogeny::random_rooted(labels, config.branch_rate, rng)?
        };
        let compositions = if family.is_stationary() {
            let w: Vec<f64> =
                config.dirichlet.iter().map(|&a| gamma(a, 1.0, rng)).collect::<Result<Vec<_>>>()?;
            vec![Composition::normalized(w)?]
        } else {
            let (a, b) = (config.ar_coefficient, config.ar_variance);
            let sd = (b / (1.0 - a * a)).sqrt();
            let x0: Vec<f64> = (0..3).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut comps = vec![alr_inverse(&x0); tree.n_nodes()];
            let root = tree.root();
            for v in tree.preorder() {
                if v != root && !tree.is_root_child(v) {
                    let p = tree.parent(v).unwrap();
                    let parent = if tree.is_root_child(p) { comps[root].clone() } else { comps[p].clone() };
                    comps[v] = ar_conditional_sample(parent.probs(), a, b, rng);
                }
            }
            comps
        };
        Self::new(family, rho1, rho2, compositions, alpha, beta_d, tree)
    }
}

/// Serializable copy of a [`ModelState`] that keeps node numbering, so
/// per-node compositions survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub family: Family,
    pub labels: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub children: Vec<Option<[usize; 2]>>,
    pub lengths: Vec<f64>,
    pub rho1: f64,
    pub rho2: f64,
    pub compositions: Vec<Vec<f64>>,
    pub alpha: Option<f64>,
    pub beta_d: Option<f64>,
}

impl From<&ModelState> for StateSnapshot {
    fn from(s: &ModelState) -> Self {
        let t = &s.tree;
        Self {
            family: s.family,
            labels: t.labels().to_vec(),
            parents: (0..t.n_nodes()).map(|v| t.parent(v)).collect(),
            children: (0..t.n_nodes()).map(|v| t.children(v)).collect(),
            lengths: (0..t.n_nodes()).map(|v| t.length(v)).collect(),
            rho1: s.rho1,
            rho2: s.rho2,
            compositions: s.compositions.iter().map(|c| c.probs().to_vec()).collect(),
            alpha: s.alpha,
            beta_d: s.beta_d,
        }
    }
}

impl StateSnapshot {
    pub fn to_state(&self) -> Result<ModelState> {
        let n = self.parents.len();
        if self.children.len() != n || self.lengths.len() != n {
            return Err(Error::Dimension("snapshot node arrays differ in length".into()));
        }
        let root = self
            .parents
            .iter()
            .position(|p| p.is_none())
            .ok_or_else(|| Error::InvalidTree("snapshot has no root".into()))?;
        let nodes = (0..n)
            .map(|v| crate::tree::Node { parent: self.parents[v], children: self.children[v], length: self.lengths[v] })
            .collect();
        let tree = Phylogeny::from_nodes(self.labels.clone(), nodes, root)?;
        let compositions =
            self.compositions.iter().map(|c| Composition::new(c.clone())).collect::<Result<Vec<_>>>()?;
        ModelState::new(self.family, self.rho1, self.rho2, compositions, self.alpha, self.beta_d, tree)
    }
}

/// Random joining of lineages, which draws rooted topologies from the Yule
/// distribution; lengths are Exp(rate).
fn random_yule<R: Rng + ?Sized>(labels: Vec<String>, rate: f64, rng: &mut R) -> Result<Phylogeny> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::InvalidTree("need at least two leaves".into()));
    }
    let exp = rand_distr::Exp::new(rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut parents = vec![None; 2 * n - 1];
    let mut lengths = vec![0.0; 2 * n - 1];
    let mut lineages: Vec<usize> = (0..n).collect();
    for next in n..2 * n - 1 {
        let i = rng.random_range(0..lineages.len());
        let a = lineages.swap_remove(i);
        let j = rng.random_range(0..lineages.len());
        let b = lineages.swap_remove(j);
        parents[a] = Some(next);
        parents[b] = Some(next);
        lengths[a] = exp.sample(rng);
        lengths[b] = exp.sample(rng);
        lineages.push(next);
    }
    Phylogeny::from_parents(labels, &parents, &lengths)
}

/// Simulates an alignment of `m` sites from `state` and summarises it.
pub fn posterior_predictive_draw(state: &ModelState, grid: &EffectGrid, m: usize, seed: u64) -> Result<PredictiveStats> {
    let aln = simulate_alignment(&state.tree, &state.substitution_model()?, grid, m, seed)?;
    distinct_char_stats(&aln)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::compress_patterns;
    use crate::tree::{enumerate_rooted, parse_newick, splits_of, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    fn comp(p: [f64; 4]) -> Composition<f64> {
        Composition::new(p.to_vec()).unwrap()
    }

    #[test]
    fn family_parsing() {
        for f in Family::ALL {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        assert_eq!("NS3".parse::<Family>().unwrap(), Family::NS3);
        assert!("s4".parse::<Family>().is_err());
    }

    #[test]
    fn prior_config_defaults_and_json() {
        let c: PriorConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PriorConfig::default());
        let c: PriorConfig = serde_json::from_str(r#"{"beta_shape": 0.1, "beta_rate": 0.1, "topology": "yule"}"#).unwrap();
        assert_eq!(c.beta_shape, 0.1);
        assert_eq!(c.topology_for(Family::S1), TopologyPrior::Yule);
        assert!(serde_json::from_str::<PriorConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = PriorConfig { ar_coefficient: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn s1_prior_by_hand() {
        // 4 leaves: 5 unrooted branches, each 0.1
        let tree = parse_newick("(t0:0.1,((t1:0.1,t2:0.1):0.1,t3:0.1):0);").unwrap();
        let s = ModelState::with_composition(Family::S1, 1.0, 1.0, Composition::uniform(4), None, None, tree).unwrap();
        let lp = s.log_prior(&PriorConfig::default());
        // Gam(1,1) at 1: −1 each; flat Dirichlet: ln 3! ; Exp(10) at 0.1: ln 10 − 1; 1/3 topologies
        let want = -2.0 + 6f64.ln() + 5.0 * (10f64.ln() - 1.0) - 3f64.ln();
        assert!((lp - want).abs() < 1e-12, "{lp} {want}");
    }

    #[test]
    fn prior_support() {
        let tree = parse_newick("(t0:0.1,((t1:0.1,t2:0.1):0.1,t3:0.1):0);").unwrap();
        let mut s =
            ModelState::with_composition(Family::S3, 1.0, 1.0, Composition::uniform(4), Some(1.0), Some(1.0), tree).unwrap();
        let c = PriorConfig::default();
        assert!(s.log_prior(&c).is_finite());
        s.tree.nodes[1].length = -0.1;
        assert_eq!(s.log_prior(&c), f64::NEG_INFINITY);
        s.tree.nodes[1].length = 0.1;
        s.beta_d = Some(-1.0);
        assert_eq!(s.log_prior(&c), f64::NEG_INFINITY);
        s.beta_d = Some(1.0);
        s.compositions[0] = comp([0.0, 0.5, 0.25, 0.25]);
        assert_eq!(s.log_prior(&c), f64::NEG_INFINITY);
    }

    #[test]
    fn family_consistency() {
        let tree = parse_newick("(t0:0.1,((t1:0.1,t2:0.1):0.1,t3:0.1):0);").unwrap();
        let pi = Composition::uniform(4);
        assert!(ModelState::with_composition(Family::S1, 1.0, 1.0, pi.clone(), Some(1.0), None, tree.clone()).is_err());
        assert!(ModelState::with_composition(Family::S3, 1.0, 1.0, pi.clone(), Some(1.0), None, tree.clone()).is_err());
        assert!(ModelState::with_composition(Family::NS2, 1.0, 1.0, pi.clone(), Some(1.0), None, tree.clone()).is_ok());
        let s = ModelState::with_composition(Family::S2, 2.0, 3.0, pi, Some(1.0), None, tree).unwrap();
        let mats = s.branch_matrices().unwrap();
        assert!(mats.iter().all(|m| m == &mats[0]));
    }

    #[test]
    fn ns_with_equal_compositions_matches_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tree = Phylogeny::random_rooted(names(6), 5.0, &mut rng).unwrap();
        let pi = comp([0.1, 0.2, 0.3, 0.4]);
        let ns = ModelState::with_composition(Family::NS3, 2.0, 3.0, pi.clone(), Some(0.7), Some(0.5), tree.clone())
            .unwrap();
        let s = ModelState::with_composition(Family::S3, 2.0, 3.0, pi, Some(0.7), Some(0.5), tree).unwrap();
        let rows: Vec<Vec<u8>> = (0..6).map(|_| (0..50).map(|_| b"AGCT"[rng.random_range(0..4)]).collect()).collect();
        let table = compress_patterns(&crate::likelihood::Alignment::new(names(6), rows).unwrap());
        let a = ns.log_likelihood(&table, 4, 4).unwrap();
        let b = s.log_likelihood(&table, 4, 4).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs(), "{a} {b}");
        assert_eq!(ns.quash_bounds().unwrap(), s.quash_bounds().unwrap());
    }

    #[test]
    fn ns_distinct_compositions_use_joint_bounds() {
        let tree = parse_newick("((t0:0.1,t1:0.2):0.1,(t2:0.1,t3:0.3):0.2);").unwrap();
        let mut s =
            ModelState::with_composition(Family::NS3, 1.5, 2.5, Composition::uniform(4), Some(1.0), Some(1.0), tree)
                .unwrap();
        s.compositions[0] = comp([0.6, 0.2, 0.1, 0.1]);
        s.compositions[3] = comp([0.1, 0.1, 0.2, 0.6]);
        let mats = s.branch_matrices().unwrap();
        assert_ne!(mats[0], mats[3]);
        assert_eq!(mats[4], mats[s.tree.root()]);
        let b = s.quash_bounds().unwrap();
        let each: Vec<QuashBounds<f64>> = s.free_compositions().iter().map(|&v| bounds(&mats[v]).unwrap()).collect();
        let lo = each.iter().map(|b| b.lower).fold(f64::NEG_INFINITY, f64::max);
        let hi = each.iter().map(|b| b.upper).fold(f64::INFINITY, f64::min);
        assert_eq!((b.lower, b.upper), (lo, hi));
        // the composition at a root child is ignored
        let before = s.substitution_model().unwrap();
        let rc = s.tree.root_children()[0];
        s.compositions[rc] = comp([0.7, 0.1, 0.1, 0.1]);
        let after = s.substitution_model().unwrap();
        let (mut p, mut q) = ([0.0; 16], [0.0; 16]);
        before.fill_transition(rc, 0.3, 1.0, 0.0, &mut p);
        after.fill_transition(rc, 0.3, 1.0, 0.0, &mut q);
        assert_eq!(p, q);
    }

    #[test]
    fn ar_conditional_mode_at_parent_for_uniform() {
        let (a, b) = (0.94, 0.31);
        let u = [0.25; 4];
        // Gaussian part in log-ratio space is maximised at a·parent = parent
        let gauss = |c: &[f64]| ar_conditional_log_density(c, &u, a, b) + c.iter().map(|p| p.ln()).sum::<f64>();
        let at = gauss(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
            let c = alr_inverse(&x);
            assert!(gauss(c.probs()) < at);
        }
        // the conditional integrates to one over the simplex (Monte Carlo in alr space)
        let m = 200_000;
        let mut acc = 0.0;
        let spread = 3.0;
        for _ in 0..m {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-spread..spread)).collect();
            let c = alr_inverse(&x);
            // change of variables back to alr: multiply by Π π_k
            acc += (ar_conditional_log_density(c.probs(), &u, a, b) + c.probs().iter().map(|p| p.ln()).sum::<f64>())
                .exp();
        }
        let integral = acc / m as f64 * (2.0 * spread).powi(3);
        assert!((integral - 1.0).abs() < 0.02, "{integral}");
    }

    #[test]
    fn alr_round_trip() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let back = alr_inverse(&alr(&p));
        for (a, b) in back.probs().iter().zip(p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn composition_prior_counts_free_vectors() {
        // with uniform compositions every AR term has the same value
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let tree = Phylogeny::random_rooted(names(5), 5.0, &mut rng).unwrap();
        let s = ModelState::with_composition(Family::NS1, 1.0, 1.0, Composition::uniform(4), None, None, tree).unwrap();
        let c = PriorConfig::default();
        let (a, b) = (c.ar_coefficient, c.ar_variance);
        let u = [0.25; 4];
        assert_eq!(s.free_compositions().len(), 2 * 5 - 3);
        let want = ar_root_log_density(&u, a, b) + (2 * 5 - 4) as f64 * ar_conditional_log_density(&u, &u, a, b);
        assert!((s.composition_log_prior(&c) - want).abs() < 1e-10);
    }

    #[test]
    fn prior_draws_are_valid_and_yule_distributed() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let c = PriorConfig::default();
        for f in Family::ALL {
            let s = ModelState::sample_prior(f, names(6), &c, &mut rng).unwrap();
            assert!(s.log_prior(&c).is_finite());
        }
        // random joining on 4 leaves: balanced rooted topologies have Yule mass 1/9 each
        let trees = enumerate_rooted(&names(4));
        let key = |t: &Phylogeny| {
            let mut v: Vec<Split> = splits_of(t, true).into_iter().filter(|s| !s.is_trivial()).collect();
            v.sort();
            v
        };
        let mut counts: HashMap<Vec<Split>, usize> = HashMap::new();
        let m = 60_000;
        for _ in 0..m {
            *counts.entry(key(&random_yule(names(4), 1.0, &mut rng).unwrap())).or_default() += 1;
        }
        for t in &trees {
            let p = yule_log_prior(t).exp();
            let f = counts.get(&key(t)).copied().unwrap_or(0) as f64 / m as f64;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / m as f64).sqrt(), "{f} {p}");
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for f in Family::ALL {
            let s = ModelState::sample_prior(f, names(7), &PriorConfig::default(), &mut rng).unwrap();
            let json = serde_json::to_string(&StateSnapshot::from(&s)).unwrap();
            let back: StateSnapshot = serde_json::from_str(&json).unwrap();
            assert_eq!(back.to_state().unwrap(), s);
        }
    }

    #[test]
    fn predictive_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mut tree = Phylogeny::random_unrooted(names(6), 10.0, &mut rng).unwrap();
        for v in 0..tree.n_nodes() {
            if v != tree.root() {
                tree.set_length(v, 0.0).unwrap();
            }
        }
        let s = ModelState::with_composition(Family::S1, 1.0, 1.0, Composition::uniform(4), None, None, tree).unwrap();
        let st = posterior_predictive_draw(&s, &EffectGrid::homogeneous(), 100, 1).unwrap();
        assert_eq!(st.mean_distinct, 1.0);
        assert_eq!(st.sd_distinct, 0.0);
        let mut s2 = s.clone();
        for v in s2.free_branches() {
            s2.tree.set_length(v, 0.5).unwrap();
        }
        let g = EffectGrid::homogeneous();
        assert_eq!(posterior_predictive_draw(&s2, &g, 300, 7).unwrap(), posterior_predictive_draw(&s2, &g, 300, 7).unwrap());
    }

    #[test]
    fn heterogeneity_lowers_distinct_counts() {
        // long branches: a homogeneous model saturates, strong rate variation does not
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let tree = Phylogeny::random_unrooted(names(10), 2.0, &mut rng).unwrap();
        let pi = Composition::uniform(4);
        let s1 = ModelState::with_composition(Family::S1, 2.0, 2.0, pi.clone(), None, None, tree.clone()).unwrap();
        let s3 = ModelState::with_composition(Family::S3, 2.0, 2.0, pi, Some(0.2), Some(1.0), tree).unwrap();
        let a = posterior_predictive_draw(&s1, &s1.effect_grid(4, 4).unwrap(), 2000, 5).unwrap();
        let b = posterior_predictive_draw(&s3, &s3.effect_grid(4, 4).unwrap(), 2000, 5).unwrap();
        assert!(a.mean_distinct > b.mean_distinct + 0.3, "{a:?} {b:?}");
    }
}
