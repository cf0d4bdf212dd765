//! Random effects for the site coefficients c_j and d_j and their
//! discretization into an equally weighted category grid.
//!
//! c_j ~ Gam(α, α), so its mean is always 1. d_j is a shifted power
//! transform of b_j ~ Beta(β + a(Q), β{b(Q) − 1} + 1) that lives on the
//! open interval (l(Q), u(Q)) and has its mode at zero; large β shrinks it
//! onto zero and recovers the rate-only model.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::quash::QuashBounds;
use crate::special::{beta_log_quantile, digamma, gamma_quantile, ln_beta, trigamma};

/// Gam(α, α) law of the rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDistribution {
    alpha: f64,
}

impl RateDistribution {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma shape {alpha} must be positive")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn quantiles(&self, kc: usize) -> Result<Vec<f64>> {
        gamma_rate_quantiles(self.alpha, kc)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.alpha, 1.0 / self.alpha).expect("validated shape").sample(rng)
    }
}

/// Law of the quadratic coefficient d_j given its bounds and concentration β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadDistribution {
    beta: f64,
    bounds: QuashBounds<f64>,
}

impl QuadDistribution {
    pub fn new(beta: f64, bounds: QuashBounds<f64>) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("concentration {beta} must be positive")));
        }
        // u = 0 sends b(Q) to infinity; it cannot occur for a rate matrix
        // with positive off-diagonal rates.
        if !(bounds.upper > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "upper bound {} must be positive",
                bounds.upper
            )));
        }
        let dist = Self { beta, bounds };
        let (_, b) = dist.beta_parameters();
        if !b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Beta parameter overflow for bounds ({}, {}) and β={beta}",
                bounds.lower, bounds.upper
            )));
        }
        Ok(dist)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bounds(&self) -> QuashBounds<f64> {
        self.bounds
    }

    pub fn lower(&self) -> f64 {
        self.bounds.lower
    }

    pub fn upper(&self) -> f64 {
        self.bounds.upper
    }

    /// w(Q) = u − l; infinite when u is.
    pub fn w(&self) -> f64 {
        self.bounds.upper - self.bounds.lower
    }

    pub fn a_q(&self) -> f64 {
        if self.bounds.upper_is_finite() {
            1.0 / self.w()
        } else {
            0.0
        }
    }

    pub fn ln_b_q(&self) -> f64 {
        if self.bounds.upper_is_finite() {
            let w = self.w();
            w * (w.ln() - self.bounds.upper.ln())
        } else {
            -self.bounds.lower
        }
    }

    /// Shape parameters of the underlying Beta variable.
    pub fn beta_parameters(&self) -> (f64, f64) {
        // β(b − 1) + 1 with b = e^{ln b}; expm1 keeps b near 1 accurate.
        (self.beta + self.a_q(), self.beta * self.ln_b_q().exp_m1() + 1.0)
    }

    /// Maps ln b_j to d_j; decreasing in b_j.
    pub fn transform_log(&self, ln_b: f64) -> f64 {
        let l = self.bounds.lower;
        if self.bounds.upper_is_finite() {
            let w = self.w();
            l - w * (ln_b / w).exp_m1()
        } else {
            l - ln_b
        }
    }

    /// Inverse of [`transform_log`](Self::transform_log) and ln|db/dd|.
    fn inverse_log(&self, d: f64) -> (f64, f64) {
        let l = self.bounds.lower;
        if self.bounds.upper_is_finite() {
            let w = self.w();
            let ln_y = ((self.bounds.upper - d) / w).ln();
            (w * ln_y, (w - 1.0) * ln_y)
        } else {
            (l - d, l - d)
        }
    }

    pub fn density(&self, d: f64) -> f64 {
        quad_density(d, self)
    }

    pub fn quantiles(&self, kd: usize) -> Result<Vec<f64>> {
        quad_quantiles(self, kd)
    }

    pub fn moments(&self) -> (f64, f64) {
        quad_moments(self)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.beta_parameters();
        // b_j = X/(X + Y) so ln b_j = −ln(1 + Y/X) without rounding b_j itself.
        let x: f64 = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
        let y: f64 = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
        let ln_b = if x > 0.0 { -(y / x).ln_1p() } else { f64::NEG_INFINITY };
        let d = self.transform_log(ln_b);
        d.clamp(self.bounds.lower, self.bounds.upper)
    }
}

/// Discrete category grid over (c, d), each cell weighted 1/(K_c·K_d).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectGrid {
    c_locations: Vec<f64>,
    d_locations: Vec<f64>,
}

impl EffectGrid {
    pub fn new(c_locations: Vec<f64>, d_locations: Vec<f64>) -> Result<Self> {
        if c_locations.is_empty() || d_locations.is_empty() {
            return Err(Error::InvalidParameter("effect grid needs at least one location per axis".into()));
        }
        if c_locations.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter("rate locations must be positive".into()));
        }
        if d_locations.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("quadratic locations must be finite".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|p| p[0] < p[1]);
        if !increasing(&c_locations) || !increasing(&d_locations) {
            return Err(Error::InvalidParameter("grid locations must be strictly increasing".into()));
        }
        Ok(Self { c_locations, d_locations })
    }

    /// Single category with c = 1, d = 0.
    pub fn homogeneous() -> Self {
        Self { c_locations: vec![1.0], d_locations: vec![0.0] }
    }

    /// Rate categories only, d = 0.
    pub fn linear(c_locations: Vec<f64>) -> Result<Self> {
        Self::new(c_locations, vec![0.0])
    }

    pub fn c_locations(&self) -> &[f64] {
        &self.c_locations
    }

    pub fn d_locations(&self) -> &[f64] {
        &self.d_locations
    }

    pub fn len(&self) -> usize {
        self.c_locations.len() * self.d_locations.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Cells in d-major order.
    pub fn categories(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.d_locations.iter().flat_map(move |&d| self.c_locations.iter().map(move |&c| (c, d)))
    }
}

fn check_count(k: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter(format!("{what} must be at least 1")));
    }
    Ok(())
}

/// Gam(α, α) quantiles at (a − 0.5)/K_c, a = 1..K_c. Not mean-corrected.
pub fn gamma_rate_quantiles(alpha: f64, kc: usize) -> Result<Vec<f64>> {
    RateDistribution::new(alpha)?;
    check_count(kc, "K_c")?;
    let locs = (0..kc)
        .map(|a| gamma_quantile(alpha, alpha, (a as f64 + 0.5) / kc as f64))
        .collect::<Result<Vec<_>>>()?;
    if locs.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::NoConvergence(format!("rate quantiles for α={alpha} not strictly increasing")));
    }
    Ok(locs)
}

/// Density of d_j; zero outside the open support.
pub fn quad_density(d: f64, dist: &QuadDistribution) -> f64 {
    if !(d > dist.lower() && d < dist.upper()) {
        return 0.0;
    }
    let (a, b) = dist.beta_parameters();
    let (ln_b, ln_jac) = dist.inverse_log(d);
    let ln_1mb = (-ln_b.exp_m1()).ln();
    let mut ln_f = (a - 1.0) * ln_b - ln_beta(a, b) + ln_jac;
    if b != 1.0 {
        ln_f += (b - 1.0) * ln_1mb;
    }
    ln_f.exp()
}

/// Quantiles of d_j at (a' − 0.5)/K_d, kept strictly inside the bounds.
pub fn quad_quantiles(dist: &QuadDistribution, kd: usize) -> Result<Vec<f64>> {
    check_count(kd, "K_d")?;
    let (a, b) = dist.beta_parameters();
    let mut locs = Vec::with_capacity(kd);
    for i in 0..kd {
        let p = (i as f64 + 0.5) / kd as f64;
        // decreasing transform: p-quantile of d is the (1 − p)-quantile of b
        let t = beta_log_quantile(a, b, 1.0 - p)?;
        locs.push(dist.bounds().clamp_inside(dist.transform_log(t)));
    }
    if locs.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::NoConvergence(format!(
            "quadratic quantiles for β={} not strictly increasing",
            dist.beta()
        )));
    }
    Ok(locs)
}

/// Closed-form mean and variance of d_j.
pub fn quad_moments(dist: &QuadDistribution) -> (f64, f64) {
    let l = dist.lower();
    let beta = dist.beta();
    if dist.bounds().upper_is_finite() {
        let w = dist.w();
        let (a, b) = dist.beta_parameters();
        // ln E[b^{k/w}] as a ratio of Beta functions
        let base = ln_beta(a, b);
        let ln_e1 = ln_beta(a + 1.0 / w, b) - base;
        let ln_e2 = ln_beta(a + 2.0 / w, b) - base;
        let mean = l - w * ln_e1.exp_m1();
        let var = w * w * (2.0 * ln_e1).exp() * (ln_e2 - 2.0 * ln_e1).exp_m1();
        (mean, var.max(0.0))
    } else {
        let top = beta * (-l).exp() + 1.0;
        let mean = l - (digamma(beta) - digamma(top));
        let var = trigamma(beta) - trigamma(top);
        (mean, var.max(0.0))
    }
}

/// Cartesian product of rate and quadratic quantiles.
pub fn build_effect_grid(rates: &RateDistribution, quad: &QuadDistribution, kc: usize, kd: usize) -> Result<EffectGrid> {
    EffectGrid::new(rates.quantiles(kc)?, quad.quantiles(kd)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(beta: f64, l: f64, u: f64) -> QuadDistribution {
        QuadDistribution::new(beta, QuashBounds::new(l, u).unwrap()).unwrap()
    }

    #[test]
    fn gamma_quantile_examples() {
        let q = gamma_rate_quantiles(1.0, 2).unwrap();
        assert!((q[0] + 0.75f64.ln()).abs() < 1e-12 && (q[1] + 0.25f64.ln()).abs() < 1e-12);
        let med = gamma_rate_quantiles(3.0, 1).unwrap()[0];
        assert!((crate::special::gamma_p(3.0, 3.0 * med).unwrap() - 0.5).abs() < 1e-13);
        for c in gamma_rate_quantiles(1e4, 4).unwrap() {
            assert!((c - 1.0).abs() < 0.05);
        }
        assert!(gamma_rate_quantiles(0.0, 4).is_err());
        assert!(gamma_rate_quantiles(1.0, 0).is_err());
    }

    #[test]
    fn exponential_special_case() {
        let d = dist(2.0, 0.0, f64::INFINITY);
        assert!((d.density(0.5) - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        let (m, v) = d.moments();
        assert!((m - 0.5).abs() < 1e-9 && (v - 0.25).abs() < 1e-9);
        let q = dist(1.0, 0.0, f64::INFINITY).quantiles(2).unwrap();
        assert!((q[0] + 0.75f64.ln()).abs() < 1e-9 && (q[1] + 0.25f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn mode_is_zero() {
        for d in [dist(1.0, -0.5, 1.5), dist(0.3, -2.0, 0.4), dist(5.0, -0.2, f64::INFINITY)] {
            let hi = if d.upper().is_finite() { d.upper() } else { 5.0 };
            let n = 20_000;
            let (mut best, mut arg) = (0.0, f64::NAN);
            for i in 1..n {
                let x = d.lower() + (hi - d.lower()) * i as f64 / n as f64;
                let f = d.density(x);
                if f > best {
                    best = f;
                    arg = x;
                }
            }
            assert!(arg.abs() <= (hi - d.lower()) / n as f64 * 1.01, "{arg}");
        }
    }

    #[test]
    fn density_zero_outside_support() {
        let d = dist(1.0, -0.5, 1.5);
        assert_eq!(d.density(-0.5), 0.0);
        assert_eq!(d.density(1.6), 0.0);
        assert!(d.density(0.0) > 0.0);
    }

    #[test]
    fn quantiles_increasing_and_inside() {
        for d in [dist(0.1, -0.3, 2.0), dist(10.0, -1.0, 0.2), dist(1.0, -0.7, f64::INFINITY)] {
            let q = d.quantiles(8).unwrap();
            assert!(q.windows(2).all(|p| p[0] < p[1]));
            assert!(q.iter().all(|&x| x > d.lower() && x < d.upper()));
        }
    }

    #[test]
    fn large_beta_shrinks_to_zero() {
        // spread near the mode is O(β^{-1/2}); outer quantiles need β ≈ 1e6
        // to sit within 1% of the bound scale, the median already does at 1e4
        for d in [(-0.3, 2.0), (-1.5, f64::INFINITY), (-0.8, 0.05), (-0.25, f64::INFINITY)] {
            let scale = (-d.0 as f64).min(if d.1.is_finite() { d.1 } else { 1.0 });
            let med = dist(1e4, d.0, d.1).quantiles(1).unwrap()[0];
            assert!(med.abs() < 0.01 * scale, "{med}");
            let q6 = dist(1e6, d.0, d.1).quantiles(8).unwrap();
            for x in &q6 {
                assert!(x.abs() < 0.01 * scale, "{x}");
            }
            let q4 = dist(1e4, d.0, d.1).quantiles(8).unwrap();
            let ratio = q4[7] / q6[7];
            assert!((ratio - 10.0).abs() < 0.5, "{ratio}");
        }
    }

    #[test]
    fn moments_decay_with_beta() {
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for &b in &[0.1, 1.0, 10.0, 100.0, 1e4, 1e6] {
            let (m, v) = dist(b, -0.3, 2.0).moments();
            assert!(m.abs() < prev.0 && v < prev.1);
            prev = (m.abs(), v);
        }
        assert!(prev.0 < 1e-5 && prev.1 < 1e-5);
    }

    #[test]
    fn sampler_respects_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = dist(0.1, -0.3, 2.0);
        for _ in 0..10_000 {
            let x = d.sample(&mut rng);
            assert!(x >= d.lower() && x <= d.upper());
        }
    }

    #[test]
    fn grid_shapes() {
        let r = RateDistribution::new(0.5).unwrap();
        let q = dist(1.0, -0.5, 1.5);
        let g = build_effect_grid(&r, &q, 4, 4).unwrap();
        assert_eq!(g.len(), 16);
        assert!((g.weight() - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(g.categories().count(), 16);
        let g1 = build_effect_grid(&r, &q, 1, 1).unwrap();
        assert_eq!(g1.len(), 1);
        let (c, dd) = g1.categories().next().unwrap();
        assert_eq!(c, r.quantiles(1).unwrap()[0]);
        assert_eq!(dd, q.quantiles(1).unwrap()[0]);
        assert!(EffectGrid::new(vec![1.0, 0.5], vec![0.0]).is_err());
        assert_eq!(EffectGrid::homogeneous().categories().collect::<Vec<_>>(), vec![(1.0, 0.0)]);
    }

    #[test]
    fn rejects_invalid() {
        let b = QuashBounds::new(-0.5, 1.0).unwrap();
        assert!(QuadDistribution::new(0.0, b).is_err());
        assert!(QuadDistribution::new(1.0, QuashBounds::new(-0.5, 0.0).unwrap()).is_err());
        assert!(RateDistribution::new(-1.0).is_err());
    }
}
