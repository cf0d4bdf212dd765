//! Quadratic across-site transform Q_j = cQ − cdQ² and its validity interval.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::ratemat::{build_tn93, Composition, RateMatrix};
use crate::scalar::Real;

/// Open interval (lower, upper) of quadratic coefficients keeping every
/// off-diagonal rate positive. `upper` may be +∞; `lower` is always finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuashBounds<T: Real = f64> {
    pub lower: T,
    pub upper: T,
}

/// Relative margin kept between grid locations and the interval ends.
pub const BOUNDARY_MARGIN: f64 = 1e-9;

impl<T: Real> QuashBounds<T> {
    pub fn new(lower: T, upper: T) -> Result<Self> {
        if !lower.is_finite() || lower > T::zero() || upper < T::zero() || upper.is_nan() {
            return Err(Error::InvalidParameter(format!("bounds ({lower}, {upper}) invalid")));
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn upper_is_finite(&self) -> bool {
        self.upper.is_finite()
    }

    #[inline]
    pub fn contains(&self, d: T) -> bool {
        d > self.lower && d < self.upper
    }

    /// u − l, infinite when the upper end is.
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    /// Width used for boundary margins: u − l, or max(−l, 1) when u = ∞.
    pub fn capped_width(&self) -> T {
        if self.upper_is_finite() {
            self.upper - self.lower
        } else {
            (-self.lower).max(T::one())
        }
    }

    /// Pulls `d` inside [l + εw, u − εw].
    pub fn clamp_inside(&self, d: T) -> T {
        let m = T::lit(BOUNDARY_MARGIN) * self.capped_width();
        let lo = self.lower + m;
        let hi = self.upper - m;
        d.max(lo).min(hi)
    }
}

/// Linear and quadratic coefficients for one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteCoefficients<T: Real = f64> {
    pub c: T,
    pub d: T,
}

impl<T: Real> SiteCoefficients<T> {
    pub fn new(c: T, d: T) -> Result<Self> {
        if !(c > T::zero()) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("linear coefficient {c} must be positive")));
        }
        if !d.is_finite() {
            return Err(Error::InvalidParameter("quadratic coefficient must be finite".into()));
        }
        Ok(Self { c, d })
    }

    /// Plain rate scaling, d = 0.
    pub fn linear(c: T) -> Result<Self> {
        Self::new(c, T::zero())
    }
}

/// c(Q − dQ²) for any real d, without validity checks.
pub fn quadratic_transform_raw<T: Real>(q: &SquareMatrix<T>, c: T, d: T) -> SquareMatrix<T> {
    let q2 = q.matmul(q);
    SquareMatrix::from_fn(q.dim(), |u, v| c * (q[(u, v)] - d * q2[(u, v)]))
}

/// Q_j = cQ − cdQ², requiring d strictly inside `bounds(q)`.
pub fn quadratic_transform<T: Real>(q: &RateMatrix<T>, coeff: SiteCoefficients<T>) -> Result<RateMatrix<T>> {
    let b = bounds(q)?;
    if !b.contains(coeff.d) {
        return Err(Error::CoefficientOutOfBounds {
            d: coeff.d.as_f64(),
            lower: b.lower.as_f64(),
            upper: b.upper.as_f64(),
        });
    }
    RateMatrix::new(quadratic_transform_raw(q.entries(), coeff.c, coeff.d))
}

/// l(Q) and u(Q) from the ratios q_uv / (Q²)_uv.
///
/// Denominators below 1e-14 (relative to the squared rate scale) impose no
/// constraint.
pub fn bounds<T: Real>(q: &RateMatrix<T>) -> Result<QuashBounds<T>> {
    let n = q.dim();
    let m = q.entries();
    let q2 = m.matmul(m);
    let scale = m.max_abs().max(T::min_positive_value());
    let zero_den = T::lit(1e-14) * scale * scale;
    let mut lower = T::neg_infinity();
    let mut upper = T::infinity();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let num = m[(u, v)];
            if !(num > T::zero()) {
                return Err(Error::InvalidRateMatrix(format!("off-diagonal ({u},{v}) is not positive")));
            }
            let den = q2[(u, v)];
            if den.abs() < zero_den {
                continue;
            }
            let r = num / den;
            if den < T::zero() {
                lower = lower.max(r);
            } else {
                upper = upper.min(r);
            }
        }
    }
    if !lower.is_finite() {
        // Unreachable for positive off-diagonals: the largest rate always
        // yields a negative denominator.
        return Err(Error::InvalidRateMatrix("empty lower constraint set".into()));
    }
    QuashBounds::new(lower, upper)
}

/// Intersection of per-matrix intervals: max of lowers, min of uppers.
pub fn joint_bounds<T: Real>(qs: &[RateMatrix<T>]) -> Result<QuashBounds<T>> {
    let mut it = qs.iter();
    let first = it.next().ok_or_else(|| Error::InvalidParameter("no rate matrices".into()))?;
    let mut acc = bounds(first)?;
    for q in it {
        let b = bounds(q)?;
        acc.lower = acc.lower.max(b.lower);
        acc.upper = acc.upper.min(b.upper);
    }
    Ok(acc)
}

/// Transversion and transition exchangeabilities of a transformed TN93
/// matrix (transversion baseline fixed at 1).
///
/// Returns (β_j, ρ_{1,j}, ρ_{2,j}).
pub fn tn93_transformed_rates<T: Real>(
    rho1: T,
    rho2: T,
    pi: &Composition<T>,
    coeff: SiteCoefficients<T>,
) -> Result<(T, T, T)> {
    let q = build_tn93(rho1, rho2, pi)?;
    let b = bounds(&q)?;
    if !b.contains(coeff.d) {
        return Err(Error::CoefficientOutOfBounds {
            d: coeff.d.as_f64(),
            lower: b.lower.as_f64(),
            upper: b.upper.as_f64(),
        });
    }
    let beta = T::one();
    let SiteCoefficients { c, d } = coeff;
    let pr = pi.purines();
    let py = pi.pyrimidines();
    let beta_j = c * beta * (T::one() + d * beta);
    let rho1_j = c * (rho1 + d * (rho1 * rho1 - (rho1 - beta) * (rho1 - beta) * pr));
    let rho2_j = c * (rho2 + d * (rho2 * rho2 - (rho2 - beta) * (rho2 - beta) * py));
    Ok((beta_j, rho1_j, rho2_j))
}

/// λ ↦ cλ − cdλ².
#[inline]
pub fn eigenvalue_map<T: Real>(lambda: Complex<T>, coeff: SiteCoefficients<T>) -> Complex<T> {
    lambda * coeff.c - lambda * lambda * (coeff.c * coeff.d)
}

/// Real-eigenvalue version used by reversible eigensystems.
#[inline]
pub fn eigenvalue_map_real<T: Real>(lambda: T, c: T, d: T) -> T {
    c * lambda - c * d * lambda * lambda
}
