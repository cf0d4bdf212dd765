//! Bayesian phylogenetic inference under linear and quadratic across-site
//! heterogeneity substitution models.
//!
//! The rate-matrix algebra ([`ratemat`], [`quash`]) and the pruning kernel in
//! [`likelihood`] are generic over the [`Real`] scalar; the statistical layers
//! built on top work in `f64`. Aliases below fix the scalar for everyday use.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod mcmc;
pub mod models;
pub mod quash;
pub mod ratemat;
pub mod scalar;
pub mod site_effects;
pub mod special;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;

pub type RateMatrix = ratemat::RateMatrix<f64>;
pub type RateMatrix32 = ratemat::RateMatrix<f32>;
pub type Composition = ratemat::Composition<f64>;
pub type ExchangeabilitySet = ratemat::ExchangeabilitySet<f64>;
pub type TransitionMatrix = ratemat::TransitionMatrix<f64>;
pub type QuashBounds = quash::QuashBounds<f64>;
pub type SiteCoefficients = quash::SiteCoefficients<f64>;
pub type Matrix = linalg::SquareMatrix<f64>;


pub use likelihood::{Alignment, PatternTable};
pub use mcmc::{ChainTrace, ProposalConfig, RunConfig};
pub use models::{Family, ModelState, PriorConfig};
pub use site_effects::{EffectGrid, QuadDistribution, RateDistribution};
pub use tree::{Phylogeny, Split, TreeSample};
