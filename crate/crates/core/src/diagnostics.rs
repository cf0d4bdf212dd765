//! Posterior predictive statistics, split-frequency curves and density
//! tables. Everything here is post-processing of finished samples.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{state_mask, Alignment};
use crate::models::{posterior_predictive_draw, ModelState};
use crate::tree::{splits_of, Split, TreeSample};

/// Across-column summary of the number of distinct nucleotides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveStats {
    pub mean_distinct: f64,
    /// Sample standard deviation (divisor M−1); zero for a single column.
    pub sd_distinct: f64,
}

/// Distinct unambiguous nucleotides in every column. Gaps and ambiguity
/// codes are ignored, so a column may count zero.
pub fn distinct_char_counts(alignment: &Alignment) -> Vec<usize> {
    (0..alignment.n_sites())
        .map(|j| {
            let mut seen = 0u8;
            for i in 0..alignment.n_taxa() {
                if let Some(m) = state_mask(alignment.get(i, j)) {
                    if m.count_ones() == 1 {
                        seen |= m;
                    }
                }
            }
            seen.count_ones() as usize
        })
        .collect()
}

/// Statistics together with the number of columns dropped for having no
/// determinate character.
pub fn distinct_char_summary(alignment: &Alignment) -> Result<(PredictiveStats, usize)> {
    let counts = distinct_char_counts(alignment);
    let kept: Vec<f64> = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    if kept.is_empty() {
        return Err(Error::Alignment("no column has a determinate nucleotide".into()));
    }
    let m = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / m;
    let sd = if kept.len() > 1 { (kept.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() } else { 0.0 };
    Ok((PredictiveStats { mean_distinct: mean, sd_distinct: sd }, counts.len() - kept.len()))
}

pub fn distinct_char_stats(alignment: &Alignment) -> Result<PredictiveStats> {
    distinct_char_summary(alignment).map(|(s, _)| s)
}

/// Simulates `n_draws` alignments of `n_sites` columns, each from a
/// posterior sample picked uniformly with replacement.
pub fn posterior_predictive_distribution(
    samples: &[ModelState],
    kc: usize,
    kd: usize,
    n_sites: usize,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<PredictiveStats>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no posterior samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_draws)
        .map(|_| {
            let s = &samples[rng.random_range(0..samples.len())];
            let grid = s.effect_grid(kc, kd)?;
            posterior_predictive_draw(s, &grid, n_sites, rng.random())
        })
        .collect()
}

pub fn write_predictive_csv<W: Write>(mut out: W, draws: &[PredictiveStats], observed: PredictiveStats) -> io::Result<()> {
    writeln!(out, "draw,mean_distinct,sd_distinct")?;
    writeln!(out, "observed,{},{}", observed.mean_distinct, observed.sd_distinct)?;
    for (i, d) in draws.iter().enumerate() {
        writeln!(out, "{i},{},{}", d.mean_distinct, d.sd_distinct)?;
    }
    Ok(())
}

/// Running relative frequency of every split, per chain, after each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFrequencySeries {
    pub labels: Vec<String>,
    pub splits: Vec<Split>,
    pub iterations: Vec<Vec<u64>>,
    /// `frequencies[chain][split][k]` after the first k+1 samples.
    pub frequencies: Vec<Vec<Vec<f64>>>,
}

impl SplitFrequencySeries {
    pub fn terminal(&self, chain: usize, split: usize) -> f64 {
        *self.frequencies[chain][split].last().expect("nonempty chain")
    }

    /// Columns: chain, iteration, split, frequency.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "chain,iteration,split,frequency")?;
        for (c, per_split) in self.frequencies.iter().enumerate() {
            for (s, series) in per_split.iter().enumerate() {
                let name = self.splits[s].display(&self.labels).to_string();
                for (k, f) in series.iter().enumerate() {
                    writeln!(out, "{c},{},\"{name}\",{f}", self.iterations[c][k])?;
                }
            }
        }
        Ok(())
    }
}

/// Nontrivial splits (clades when `rooted`) observed in any chain.
pub fn cumulative_split_frequencies(chains: &[TreeSample], rooted: bool) -> Result<SplitFrequencySeries> {
    let first = chains.first().ok_or_else(|| Error::InvalidParameter("no chains".into()))?;
    let labels = first.labels().to_vec();
    let mut per_chain: Vec<Vec<Vec<Split>>> = Vec::with_capacity(chains.len());
    let mut index: BTreeMap<Split, usize> = BTreeMap::new();
    for ch in chains {
        let mut sets = Vec::with_capacity(ch.len());
        for t in ch.trees() {
            let t = t.relabeled(&labels)?;
            let s: Vec<Split> = splits_of(&t, rooted).into_iter().filter(|s| !s.is_trivial()).collect();
            for x in &s {
                let next = index.len();
                index.entry(x.clone()).or_insert(next);
            }
            sets.push(s);
        }
        per_chain.push(sets);
    }
    let mut splits = vec![None; index.len()];
    for (s, &i) in &index {
        splits[i] = Some(s.clone());
    }
    let splits: Vec<Split> = splits.into_iter().map(|s| s.unwrap()).collect();
    let frequencies = per_chain
        .iter()
        .map(|sets| {
            let mut counts = vec![0usize; splits.len()];
            let mut out = vec![Vec::with_capacity(sets.len()); splits.len()];
            for (k, s) in sets.iter().enumerate() {
                for x in s {
                    counts[index[x]] += 1;
                }
                for (i, series) in out.iter_mut().enumerate() {
                    series.push(counts[i] as f64 / (k + 1) as f64);
                }
            }
            out
        })
        .collect();
    Ok(SplitFrequencySeries {
        labels,
        splits,
        iterations: chains.iter().map(|c| c.iterations().to_vec()).collect(),
        frequencies,
    })
}

/// Posterior kernel density next to the prior on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub x: Vec<f64>,
    pub posterior: Vec<f64>,
    pub prior: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityTable {
    /// Columns: x, posterior, prior.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,posterior,prior")?;
        for i in 0..self.x.len() {
            writeln!(out, "{},{},{}", self.x[i], self.posterior[i], self.prior[i])?;
        }
        Ok(())
    }

    /// Trapezoid ∫|posterior − prior| over the grid.
    pub fn l1_distance(&self) -> f64 {
        let f: Vec<f64> = self.posterior.iter().zip(&self.prior).map(|(a, b)| (a - b).abs()).collect();
        self.x.windows(2).zip(f.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Linear-interpolation sample quantile.
pub fn sample_quantile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

/// Equal-tailed credible interval.
pub fn credible_interval(samples: &[f64], level: f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail))
}

/// Gaussian KDE with Silverman's bandwidth, reflected at `lower` when the
/// parameter is bounded below, evaluated on `n_points` grid values.
pub fn density_summary(
    samples: &[f64],
    prior: impl Fn(f64) -> f64,
    lower: Option<f64>,
    n_points: usize,
) -> Result<DensityTable> {
    if samples.len() < 100 {
        return Err(Error::InvalidParameter(format!("{} samples; a density needs at least 100", samples.len())));
    }
    if n_points < 2 {
        return Err(Error::InvalidParameter("need at least two grid points".into()));
    }
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::InvalidParameter("constant samples give a degenerate density".into()));
    }
    let h = 0.9 * spread * n.powf(-0.2);
    let mut lo = sorted[0] - 3.0 * h;
    if let Some(b) = lower {
        lo = lo.max(b);
    }
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let x: Vec<f64> = (0..n_points).map(|i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64).collect();
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let kernel_sum = |t: f64| -> f64 {
        // only samples within 8h contribute
        let a = sorted.partition_point(|&s| s < t - 8.0 * h);
        let b = sorted.partition_point(|&s| s <= t + 8.0 * h);
        sorted[a..b].iter().map(|&s| (-0.5 * ((t - s) / h).powi(2)).exp()).sum()
    };
    let posterior = x
        .iter()
        .map(|&t| {
            let mut k = kernel_sum(t);
            if let Some(b) = lower {
                k += kernel_sum(2.0 * b - t);
            }
            k * norm
        })
        .collect();
    let prior = x.iter().map(|&t| prior(t)).collect();
    Ok(DensityTable { x, posterior, prior, bandwidth: h })
}
