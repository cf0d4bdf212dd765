//! Forward simulation of alignments down a tree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::alignment::{Alignment, STATES};
use super::engine::SubstitutionModel;
use crate::error::{Error, Result};
use crate::site_effects::EffectGrid;
use crate::tree::Phylogeny;

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Simulates `m` sites: a category drawn uniformly from the grid, a root
/// state from the root distribution, then transitions down every branch.
pub fn simulate_alignment(
    tree: &Phylogeny,
    model: &SubstitutionModel,
    grid: &EffectGrid,
    m: usize,
    seed: u64,
) -> Result<Alignment> {
    if m == 0 {
        return Err(Error::InvalidParameter("cannot simulate zero sites".into()));
    }
    if model.n_nodes() != tree.n_nodes() {
        return Err(Error::Dimension("model and tree sizes differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats: Vec<(f64, f64)> = grid.categories().collect();
    let n_nodes = tree.n_nodes();
    // mats[cat][node] row-major 4x4
    let mut mats = vec![vec![[0.0f64; 16]; n_nodes]; cats.len()];
    for (j, &(c, d)) in cats.iter().enumerate() {
        for v in tree.branches() {
            model.fill_transition(v, tree.length(v), c, d, &mut mats[j][v]);
        }
    }
    let order = tree.preorder();
    let mut rows = vec![Vec::with_capacity(m); tree.n_leaves()];
    let mut state = vec![0usize; n_nodes];
    for _ in 0..m {
        let j = rng.random_range(0..cats.len());
        for &v in &order {
            state[v] = match tree.parent(v) {
                None => draw(&mut rng, model.root_dist()),
                Some(p) => {
                    let s = state[p];
                    draw(&mut rng, &mats[j][v][s * 4..s * 4 + 4])
                }
            };
            if v < tree.n_leaves() {
                rows[v].push(STATES[state[v]]);
            }
        }
    }
    Alignment::new(tree.labels().to_vec(), rows)
}
