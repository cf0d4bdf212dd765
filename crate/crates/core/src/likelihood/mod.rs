//! Site likelihoods by pruning, the category-grid mixture, and simulation.

mod alignment;
mod engine;
mod oracle;
mod simulate;

pub use alignment::{compress_patterns, is_missing, state_mask, Alignment, PatternTable, STATES};
pub use engine::{grid_log_likelihood, LikelihoodEngine, SubstitutionModel};
pub use oracle::{brute_force_site_likelihood, site_likelihood};
pub use simulate::simulate_alignment;
