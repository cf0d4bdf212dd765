//! Metropolis-within-Gibbs sampling over every unknown of a model.
//!
//! One sweep updates, in order: ρ₁, ρ₂, the compositions, α, β, every free
//! branch length, then makes one topology proposal. Positive scalars move by
//! log-normal random walks; compositions by normal steps in additive
//! log-ratio space. Proposal scales adapt during burn-in and are frozen
//! before the first retained sample.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{grid_log_likelihood, LikelihoodEngine, PatternTable, SubstitutionModel};
use crate::models::{alr, alr_inverse, ar_conditional_log_density, ar_conditional_sample, Family, ModelState, PriorConfig, StateSnapshot};
use crate::site_effects::EffectGrid;
use crate::tree::{serialize_newick, TreeSample};

/// Smallest composition entry a proposal may produce.
const SIMPLEX_FLOOR: f64 = 1e-8;
const ADAPT_WINDOW: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub sigma_rho1: f64,
    pub sigma_rho2: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_branch: f64,
    /// Standard deviation of the log-ratio step.
    pub sigma_composition: f64,
    pub p_nni: f64,
    pub p_spr: f64,
    /// Ignored for stationary families, whose likelihood does not see the root.
    pub p_root: f64,
    /// Tune the scales towards 20-40% acceptance during burn-in.
    pub adapt: bool,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            sigma_rho1: 0.3,
            sigma_rho2: 0.3,
            sigma_alpha: 0.3,
            sigma_beta: 0.5,
            sigma_branch: 0.5,
            sigma_composition: 0.1,
            p_nni: 0.4,
            p_spr: 0.4,
            p_root: 0.2,
            adapt: true,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.sigma_rho1,
            self.sigma_rho2,
            self.sigma_alpha,
            self.sigma_beta,
            self.sigma_branch,
            self.sigma_composition,
        ];
        if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("proposal scales must be positive".into()));
        }
        let p = [self.p_nni, self.p_spr, self.p_root];
        if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("topology move probabilities must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }

    fn scale_mut(&mut self, block: Block) -> Option<&mut f64> {
        match block {
            Block::Rho1 => Some(&mut self.sigma_rho1),
            Block::Rho2 => Some(&mut self.sigma_rho2),
            Block::Composition => Some(&mut self.sigma_composition),
            Block::Alpha => Some(&mut self.sigma_alpha),
            Block::Beta => Some(&mut self.sigma_beta),
            Block::Branch => Some(&mut self.sigma_branch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub family: Family,
    pub kc: usize,
    pub kd: usize,
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub priors: PriorConfig,
    pub proposals: ProposalConfig,
    /// Rebuild the likelihood from scratch at every proposal.
    pub no_cache: bool,
    /// Compare the cached log-likelihood with a fresh one at every retained
    /// sample; a disagreement beyond 1e-8 aborts the run.
    pub verify_cache: bool,
}

impl RunConfig {
    pub fn new(family: Family, iterations: u64, burn_in: u64, thin: u64, seed: u64) -> Self {
        Self {
            family,
            kc: 4,
            kd: 4,
            iterations,
            burn_in,
            thin,
            seed,
            priors: PriorConfig::default(),
            proposals: ProposalConfig::default(),
            no_cache: false,
            verify_cache: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.proposals.validate()?;
        if self.kc == 0 || self.kd == 0 {
            return Err(Error::Config("category counts must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!("burn-in {} leaves no iterations of {}", self.burn_in, self.iterations)));
        }
        if self.thin > self.iterations - self.burn_in {
            return Err(Error::Config("thin exceeds the post-burn-in length".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> u64 {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// What the chain targets: a posterior, or the prior alone.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Data(&'a PatternTable),
    PriorOnly(&'a [String]),
}

impl Target<'_> {
    fn labels(&self) -> Vec<String> {
        match self {
            Target::Data(p) => p.names().to_vec(),
            Target::PriorOnly(l) => l.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Rho1,
    Rho2,
    Composition,
    Alpha,
    Beta,
    Branch,
    Nni,
    Spr,
    Root,
}

const BLOCKS: [Block; 9] = [
    Block::Rho1,
    Block::Rho2,
    Block::Composition,
    Block::Alpha,
    Block::Beta,
    Block::Branch,
    Block::Nni,
    Block::Spr,
    Block::Root,
];

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::Rho1 => "rho1",
            Block::Rho2 => "rho2",
            Block::Composition => "composition",
            Block::Alpha => "alpha",
            Block::Beta => "beta",
            Block::Branch => "branch",
            Block::Nni => "nni",
            Block::Spr => "spr",
            Block::Root => "root",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub block: String,
    pub proposed: u64,
    pub accepted: u64,
}

impl Acceptance {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Receives each retained sample as it is drawn.
pub trait TraceSink {
    fn record(&mut self, iteration: u64, state: &ModelState, log_likelihood: f64, log_prior: f64) -> Result<()>;
}

/// Tab-separated scalars, one Newick tree per line, and optionally one
/// JSON state per line; every stream is flushed after each sample.
pub struct TraceWriter {
    tsv: Box<dyn Write + Send>,
    trees: Box<dyn Write + Send>,
    states: Option<Box<dyn Write + Send>>,
}

pub const TRACE_HEADER: &str = "iteration\tlog_likelihood\tlog_prior\trho1\trho2\talpha\tbeta\ttree_length";

fn io_err(e: std::io::Error) -> Error {
    Error::Config(format!("trace output: {e}"))
}

impl TraceWriter {
    pub fn new(
        mut tsv: Box<dyn Write + Send>,
        trees: Box<dyn Write + Send>,
        states: Option<Box<dyn Write + Send>>,
    ) -> Result<Self> {
        writeln!(tsv, "{TRACE_HEADER}").map_err(io_err)?;
        tsv.flush().map_err(io_err)?;
        Ok(Self { tsv, trees, states })
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl TraceSink for TraceWriter {
    fn record(&mut self, iteration: u64, s: &ModelState, ll: f64, lp: f64) -> Result<()> {
        writeln!(
            self.tsv,
            "{iteration}\t{ll}\t{lp}\t{}\t{}\t{}\t{}\t{}",
            s.rho1,
            s.rho2,
            fmt_opt(s.alpha),
            fmt_opt(s.beta_d),
            s.tree.tree_length()
        )
        .map_err(io_err)?;
        writeln!(self.trees, "{}", serialize_newick(&s.tree)).map_err(io_err)?;
        self.tsv.flush().map_err(io_err)?;
        self.trees.flush().map_err(io_err)?;
        if let Some(w) = self.states.as_mut() {
            let line = serde_json::to_string(&StateSnapshot::from(s)).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w, "{line}").map_err(io_err)?;
            w.flush().map_err(io_err)?;
        }
        Ok(())
    }
}

/// Retained samples of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub seed: u64,
    pub iterations: Vec<u64>,
    pub log_likelihood: Vec<f64>,
    pub log_prior: Vec<f64>,
    pub states: Vec<ModelState>,
    /// Counts over the sampling phase only.
    pub acceptance: Vec<Acceptance>,
    /// Scales in force after adaptation.
    pub final_proposals: ProposalConfig,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Named scalar series: rho1, rho2, alpha, beta, tree_length,
    /// log_likelihood, log_prior. Absent parameters give `None`.
    pub fn scalar(&self, name: &str) -> Option<Vec<f64>> {
        let pick: &dyn Fn(usize) -> Option<f64> = match name {
            "rho1" => &|i| Some(self.states[i].rho1),
            "rho2" => &|i| Some(self.states[i].rho2),
            "alpha" => &|i| self.states[i].alpha,
            "beta" => &|i| self.states[i].beta_d,
            "tree_length" => &|i| Some(self.states[i].tree.tree_length()),
            "log_likelihood" => &|i| Some(self.log_likelihood[i]),
            "log_prior" => &|i| Some(self.log_prior[i]),
            _ => return None,
        };
        (0..self.len()).map(pick).collect()
    }

    pub fn tree_sample(&self) -> Result<TreeSample> {
        TreeSample::new(self.states.iter().map(|s| s.tree.clone()).collect(), self.iterations.clone())
    }

    pub fn acceptance_rate(&self, block: &str) -> Option<f64> {
        self.acceptance.iter().find(|a| a.block == block).map(Acceptance::rate)
    }
}

enum Change {
    /// Baseline matrices and the grid.
    Model,
    /// Grid only (α or β).
    Grid,
    /// Baseline matrices on the listed branches, grid unchanged.
    ModelBranches(Vec<usize>),
    /// Lengths or attachment of the listed branches.
    Branches(Vec<usize>),
}

struct Current {
    model: SubstitutionModel,
    grid: EffectGrid,
    engine: LikelihoodEngine,
}

struct Chain<'a> {
    cfg: &'a RunConfig,
    data: Option<&'a PatternTable>,
    scales: ProposalConfig,
    state: ModelState,
    cur: Option<Current>,
    log_lik: f64,
    log_prior: f64,
    rng: ChaCha8Rng,
    counts: Vec<(u64, u64)>,
    window: Vec<(u64, u64)>,
}

impl<'a> Chain<'a> {
    fn new(cfg: &'a RunConfig, target: Target<'a>, state: ModelState, rng: ChaCha8Rng) -> Result<Self> {
        let log_prior = state.log_prior(&cfg.priors);
        if !log_prior.is_finite() {
            return Err(Error::InvalidParameter("initial state outside the prior support".into()));
        }
        let (cur, log_lik, data) = match target {
            Target::PriorOnly(_) => (None, 0.0, None),
            Target::Data(p) => {
                let model = state.substitution_model()?;
                let grid = state.effect_grid(cfg.kc, cfg.kd)?;
                let mut engine = LikelihoodEngine::new(p, state.tree.labels(), grid.len())?;
                let ll = engine.evaluate_full(&state.tree, &model, &grid)?;
                engine.accept();
                if !ll.is_finite() {
                    return Err(Error::ZeroLikelihood(engine.zero_pattern().unwrap_or(0)));
                }
                (Some(Current { model, grid, engine }), ll, Some(p))
            }
        };
        Ok(Self {
            cfg,
            data,
            scales: cfg.proposals.clone(),
            state,
            cur,
            log_lik,
            log_prior,
            rng,
            counts: vec![(0, 0); BLOCKS.len()],
            window: vec![(0, 0); BLOCKS.len()],
        })
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn evaluate(&mut self, new: &ModelState, change: Change) -> Result<(f64, Option<(SubstitutionModel, EffectGrid)>)> {
        let cfg = self.cfg;
        let cur = self.cur.as_mut().expect("data present");
        let (model, grid) = match &change {
            Change::Model => (Some(new.substitution_model()?), Some(new.effect_grid(cfg.kc, cfg.kd)?)),
            Change::ModelBranches(_) => (Some(new.substitution_model()?), None),
            Change::Grid => (None, Some(new.effect_grid(cfg.kc, cfg.kd)?)),
            Change::Branches(_) => (None, None),
        };
        let m = model.as_ref().unwrap_or(&cur.model);
        let g = grid.as_ref().unwrap_or(&cur.grid);
        let ll = if cfg.no_cache {
            let fresh = grid_log_likelihood(self.data.unwrap(), &new.tree, m, g)?;
            cur.engine.evaluate_full(&new.tree, m, g)?;
            fresh
        } else {
            match &change {
                Change::Model | Change::Grid => cur.engine.evaluate_full(&new.tree, m, g)?,
                Change::ModelBranches(nodes) | Change::Branches(nodes) => {
                    cur.engine.evaluate_branches(&new.tree, m, g, nodes)?
                }
            }
        };
        let changed = match (model, grid) {
            (None, None) => None,
            (m2, g2) => Some((m2.unwrap_or_else(|| cur.model.clone()), g2.unwrap_or_else(|| cur.grid.clone()))),
        };
        Ok((ll, changed))
    }

    /// Metropolis-Hastings decision for a fully formed proposal.
    fn propose(&mut self, block: Block, new: ModelState, log_hastings: f64, change: Change) -> bool {
        let b = BLOCKS.iter().position(|&x| x == block).unwrap();
        self.counts[b].0 += 1;
        self.window[b].0 += 1;
        let u: f64 = self.rng.random();
        let lp = new.log_prior(&self.cfg.priors);
        if !lp.is_finite() {
            return false;
        }
        let (ll, changed) = if self.cur.is_some() {
            match self.evaluate(&new, change) {
                Ok(x) => x,
                Err(_) => {
                    self.cur.as_mut().unwrap().engine.reject();
                    return false;
                }
            }
        } else {
            (0.0, None)
        };
        let log_a = ll + lp - self.log_lik - self.log_prior + log_hastings;
        if u.ln() < log_a {
            self.state = new;
            self.log_lik = ll;
            self.log_prior = lp;
            if let Some(cur) = self.cur.as_mut() {
                cur.engine.accept();
                if let Some((m, g)) = changed {
                    cur.model = m;
                    cur.grid = g;
                }
            }
            self.counts[b].1 += 1;
            self.window[b].1 += 1;
            true
        } else {
            if let Some(cur) = self.cur.as_mut() {
                cur.engine.reject();
            }
            false
        }
    }

    fn update_scalar(&mut self, block: Block) {
        let sigma = *self.scales.scale_mut(block).unwrap();
        let x = match block {
            Block::Rho1 => self.state.rho1,
            Block::Rho2 => self.state.rho2,
            Block::Alpha => match self.state.alpha {
                Some(a) => a,
                None => return,
            },
            Block::Beta => match self.state.beta_d {
                Some(b) => b,
                None => return,
            },
            _ => unreachable!(),
        };
        let y = x * (sigma * self.normal()).exp();
        let mut new = self.state.clone();
        let change = match block {
            Block::Rho1 => {
                new.rho1 = y;
                Change::Model
            }
            Block::Rho2 => {
                new.rho2 = y;
                Change::Model
            }
            Block::Alpha => {
                new.alpha = Some(y);
                Change::Grid
            }
            _ => {
                new.beta_d = Some(y);
                Change::Grid
            }
        };
        self.propose(block, new, y.ln() - x.ln(), change);
    }

    fn update_compositions(&mut self) {
        let sigma = self.scales.sigma_composition;
        for v in self.state.free_compositions() {
            let old = self.state.compositions[v].clone();
            let x: Vec<f64> = alr(old.probs()).iter().map(|&a| a + sigma * self.rng.sample::<f64, _>(StandardNormal)).collect();
            let prop = alr_inverse(&x);
            if prop.probs().iter().any(|&p| p < SIMPLEX_FLOOR) {
                // counts as a rejected proposal
                let b = BLOCKS.iter().position(|&x| x == Block::Composition).unwrap();
                self.counts[b].0 += 1;
                self.window[b].0 += 1;
                continue;
            }
            let log_h = prop.probs().iter().map(|p| p.ln()).sum::<f64>() - old.probs().iter().map(|p| p.ln()).sum::<f64>();
            let mut new = self.state.clone();
            new.compositions[v] = prop;
            let change = if self.state.family.is_stationary() || self.state.beta_d.is_some() {
                Change::Model
            } else if v == self.state.tree.root() {
                Change::ModelBranches(self.state.tree.root_children().to_vec())
            } else {
                Change::ModelBranches(vec![v])
            };
            self.propose(Block::Composition, new, log_h, change);
        }
    }

    fn update_branches(&mut self) {
        let sigma = self.scales.sigma_branch;
        for v in self.state.free_branches() {
            let x = self.state.tree.length(v);
            let y = x * (sigma * self.normal()).exp();
            let mut new = self.state.clone();
            if new.tree.set_length(v, y).is_err() || !(y > 0.0) {
                continue;
            }
            self.propose(Block::Branch, new, y.ln() - x.ln(), Change::Branches(vec![v]));
        }
    }

    fn topology_change(&self, nodes: Vec<usize>) -> Change {
        if self.state.family.is_stationary() {
            Change::Branches(nodes)
        } else {
            Change::Model
        }
    }

    fn update_topology(&mut self) {
        let stationary = self.state.family.is_stationary();
        let (p_nni, p_spr) = if stationary {
            let s = self.scales.p_nni + self.scales.p_spr;
            if s == 0.0 {
                return;
            }
            (self.scales.p_nni / s, self.scales.p_spr / s)
        } else {
            (self.scales.p_nni, self.scales.p_spr)
        };
        let u: f64 = self.rng.random();
        if u < p_nni {
            self.nni();
        } else if u < p_nni + p_spr {
            self.spr();
        } else if !stationary {
            self.root_move();
        }
    }

    fn nni(&mut self) {
        let cands = self.state.tree.nni_candidates();
        if cands.is_empty() {
            return;
        }
        let v = cands[self.rng.random_range(0..cands.len())];
        let which = self.rng.random_range(0..2);
        let mut new = self.state.clone();
        let mv = new.tree.apply_nni(v, which).expect("candidate");
        let change = self.topology_change(vec![mv.down, mv.up]);
        self.propose(Block::Nni, new, 0.0, change);
    }

    fn spr(&mut self) {
        let prune = self.state.tree.spr_prune_candidates();
        if prune.is_empty() {
            return;
        }
        let s = prune[self.rng.random_range(0..prune.len())];
        let targets = self.state.tree.spr_targets(s);
        if targets.is_empty() {
            return;
        }
        let r = targets[self.rng.random_range(0..targets.len())];
        let frac: f64 = self.rng.random();
        let mut new = self.state.clone();
        let mv = new.tree.apply_spr(s, r, frac).expect("valid SPR");
        let mut log_h = mv.log_jacobian + (prune.len() as f64).ln() - (new.tree.spr_prune_candidates().len() as f64).ln();
        if !new.family.is_stationary() {
            // the regrafted branch draws a fresh composition from its prior
            // conditional; the reverse move would do the same for the old one
            let (a, b) = (self.cfg.priors.ar_coefficient, self.cfg.priors.ar_variance);
            let p = mv.attach;
            let old_parent = self.state.branch_composition(mv.old_parent).clone();
            let new_parent = new.branch_composition(new.tree.parent(p).unwrap()).clone();
            let drawn = ar_conditional_sample(new_parent.probs(), a, b, &mut self.rng);
            log_h += ar_conditional_log_density(self.state.compositions[p].probs(), old_parent.probs(), a, b)
                - ar_conditional_log_density(drawn.probs(), new_parent.probs(), a, b);
            new.compositions[p] = drawn;
        }
        let change = self.topology_change(vec![mv.old_sibling, mv.target, mv.attach]);
        self.propose(Block::Spr, new, log_h, change);
    }

    fn root_move(&mut self) {
        let cands = self.state.tree.root_move_candidates();
        if cands.is_empty() {
            return;
        }
        let x = cands[self.rng.random_range(0..cands.len())];
        let frac: f64 = self.rng.random();
        let mut new = self.state.clone();
        let mv = new.tree.apply_root_move(x, frac).expect("candidate");
        let root = new.tree.root();
        // the branch above x becomes the root edge and keeps its composition;
        // the merged edge inherits the old root composition
        new.compositions[mv.demoted] = self.state.compositions[root].clone();
        new.compositions[root] = self.state.compositions[x].clone();
        let log_h = mv.log_jacobian + (cands.len() as f64).ln() - (new.tree.root_move_candidates().len() as f64).ln();
        self.propose(Block::Root, new, log_h, Change::Model);
    }

    fn sweep(&mut self) {
        self.update_scalar(Block::Rho1);
        self.update_scalar(Block::Rho2);
        self.update_compositions();
        self.update_scalar(Block::Alpha);
        self.update_scalar(Block::Beta);
        self.update_branches();
        self.update_topology();
    }

    fn adapt(&mut self) {
        for (i, &block) in BLOCKS.iter().enumerate() {
            let (p, a) = self.window[i];
            if p < 20 {
                continue;
            }
            let rate = a as f64 / p as f64;
            if let Some(s) = self.scales.scale_mut(block) {
                if rate < 0.2 {
                    *s = (*s * 0.7).max(1e-4);
                } else if rate > 0.4 {
                    *s = (*s * 1.4).min(10.0);
                }
            }
            self.window[i] = (0, 0);
        }
    }

    fn verify(&self) -> Result<()> {
        let (Some(data), Some(_)) = (self.data, self.cur.as_ref()) else {
            return Ok(());
        };
        let fresh = self.state.log_likelihood(data, self.cfg.kc, self.cfg.kd)?;
        if (fresh - self.log_lik).abs() > 1e-8 * fresh.abs().max(1.0) {
            return Err(Error::NoConvergence(format!("cached log-likelihood {} but recomputed {fresh}", self.log_lik)));
        }
        Ok(())
    }
}

/// Runs one chain from a prior draw.
pub fn run_chain(config: &RunConfig, target: Target<'_>, sink: Option<&mut dyn TraceSink>) -> Result<ChainTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = ModelState::sample_prior(config.family, target.labels(), &config.priors, &mut rng)?;
    run_chain_from(config, target, init, rng, sink)
}

/// Runs one chain from a given state.
pub fn run_chain_from_state(
    config: &RunConfig,
    target: Target<'_>,
    init: ModelState,
    sink: Option<&mut dyn TraceSink>,
) -> Result<ChainTrace> {
    config.validate()?;
    if init.family != config.family {
        return Err(Error::Config("initial state belongs to another family".into()));
    }
    if init.tree.labels() != target.labels().as_slice() {
        return Err(Error::Config("initial tree and data taxa differ".into()));
    }
    run_chain_from(config, target, init, ChaCha8Rng::seed_from_u64(config.seed), sink)
}

fn run_chain_from(
    config: &RunConfig,
    target: Target<'_>,
    init: ModelState,
    rng: ChaCha8Rng,
    mut sink: Option<&mut dyn TraceSink>,
) -> Result<ChainTrace> {
    let mut chain = Chain::new(config, target, init, rng)?;
    let n = config.n_samples() as usize;
    let mut trace = ChainTrace {
        seed: config.seed,
        iterations: Vec::with_capacity(n),
        log_likelihood: Vec::with_capacity(n),
        log_prior: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        acceptance: Vec::new(),
        final_proposals: config.proposals.clone(),
    };
    for it in 1..=config.iterations {
        chain.sweep();
        if it <= config.burn_in {
            if config.proposals.adapt && it % ADAPT_WINDOW == 0 {
                chain.adapt();
            }
            if it == config.burn_in {
                chain.counts.iter_mut().for_each(|c| *c = (0, 0));
            }
            continue;
        }
        if (it - config.burn_in).is_multiple_of(config.thin) {
            if config.verify_cache {
                chain.verify()?;
            }
            if let Some(s) = sink.as_deref_mut() {
                s.record(it, &chain.state, chain.log_lik, chain.log_prior)?;
            }
            trace.iterations.push(it);
            trace.log_likelihood.push(chain.log_lik);
            trace.log_prior.push(chain.log_prior);
            trace.states.push(chain.state.clone());
        }
    }
    trace.acceptance = BLOCKS
        .iter()
        .zip(&chain.counts)
        .map(|(b, &(p, a))| Acceptance { block: b.name().to_string(), proposed: p, accepted: a })
        .collect();
    trace.final_proposals = chain.scales.clone();
    Ok(trace)
}

/// Independent chains on separate threads, one per seed, each started from
/// its own prior draw.
pub fn multi_chain(config: &RunConfig, target: Target<'_>, seeds: &[u64]) -> Result<Vec<ChainTrace>> {
    let sinks: Vec<Option<Box<dyn TraceSink + Send>>> = seeds.iter().map(|_| None).collect();
    multi_chain_with_sinks(config, target, seeds, sinks)
}

pub fn multi_chain_with_sinks(
    config: &RunConfig,
    target: Target<'_>,
    seeds: &[u64],
    sinks: Vec<Option<Box<dyn TraceSink + Send>>>,
) -> Result<Vec<ChainTrace>> {
    if sinks.len() != seeds.len() {
        return Err(Error::Config("one sink slot per chain".into()));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .zip(sinks)
            .map(|(&seed, mut sink)| {
                let cfg = RunConfig { seed, ..config.clone() };
                scope.spawn(move || {
                    let s: Option<&mut dyn TraceSink> = match sink.as_mut() {
                        Some(b) => Some(b.as_mut()),
                        None => None,
                    };
                    run_chain(&cfg, target, s)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    })
}
