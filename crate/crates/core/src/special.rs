//! Special functions and bracketed inversion of distribution functions.
//!
//! Log-gamma and digamma come from `statrs`. The regularized incomplete beta
//! and gamma functions are evaluated here because random-effect distributions
//! routinely produce Beta parameters around 1e12, outside the iteration budget
//! of the textbook continued fraction.

use crate::error::{Error, Result};

pub use statrs::function::gamma::{digamma, ln_gamma};

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 1_000_000;

/// ψ₁(x), the trigamma function, for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / x;
    let z2 = z * z;
    // Bernoulli-number asymptotic series
    let series = z
        + z2 / 2.0
        + z * z2
            * (1.0 / 6.0
                + z2 * (-1.0 / 30.0
                    + z2 * (1.0 / 42.0 + z2 * (-1.0 / 30.0 + z2 * (5.0 / 66.0 + z2 * (-691.0 / 2730.0 + z2 * 7.0 / 6.0))))));
    acc + series
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Remainder of the Stirling series, lnΓ(z) − [(z − ½)ln z − z + ln√(2π)], z ≥ 10.
fn stirling_corr(z: f64) -> f64 {
    let r = 1.0 / (z * z);
    (1.0 / 12.0 + r * (-1.0 / 360.0 + r * (1.0 / 1260.0 + r * (-1.0 / 1680.0 + r * (1.0 / 1188.0 - r * 691.0 / 360_360.0))))) / z
}

/// lnΓ by upward recurrence into the Stirling range.
fn ln_gamma_stirling(mut x: f64) -> f64 {
    let mut prod = 1.0;
    while x < 10.0 {
        prod *= x;
        x += 1.0;
    }
    (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_corr(x) - prod.ln()
}

/// ln B(a, b), arranged so that large arguments do not cancel.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (p, q) = if a < b { (a, b) } else { (b, a) };
    if p >= 10.0 {
        let corr = stirling_corr(p) + stirling_corr(q) - stirling_corr(p + q);
        -0.5 * q.ln() + LN_SQRT_2PI + corr + (p - 0.5) * (p / (p + q)).ln() + q * (-p / (p + q)).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_corr(q) - stirling_corr(p + q);
        ln_gamma_stirling(p) + corr + p - p * (p + q).ln() + (q - 0.5) * (-p / (p + q)).ln_1p()
    } else {
        ln_gamma_stirling(p) + ln_gamma_stirling(q) - ln_gamma_stirling(p + q)
    }
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || x.is_nan() {
        return Err(Error::InvalidParameter(format!("gamma_p({a}, {x})")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        Ok(1.0 - gamma_cf(a, x)?)
    }
}

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || x.is_nan() {
        return Err(Error::InvalidParameter(format!("gamma_q({a}, {x})")));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_series(a, x)?)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

fn gamma_series(a: f64, x: f64) -> Result<f64> {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            return Ok((sum * gamma_prefactor(a, x)).min(1.0));
        }
    }
    Err(Error::NoConvergence(format!("incomplete gamma series a={a} x={x}")))
}

fn gamma_cf(a: f64, x: f64) -> Result<f64> {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok((gamma_prefactor(a, x) * h).min(1.0));
        }
    }
    Err(Error::NoConvergence(format!("incomplete gamma continued fraction a={a} x={x}")))
}

/// Parameter ratio beyond which the Beta law is evaluated through its
/// gamma limit.
const BETA_GAMMA_LIMIT: f64 = 1e8;

/// Regularized incomplete beta I_x(a, b), taking both x and y = 1 − x so
/// that callers holding an accurate complement lose no precision.
pub fn beta_reg_xy(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidParameter(format!("beta_reg({a}, {b}, {x})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    if b > BETA_GAMMA_LIMIT * a.max(1.0) {
        // B ~ Gamma(a)/(b + (a−1)/2) on the −ln(1 − x) scale.
        let ln_y = if x < 0.5 { (-x).ln_1p() } else { y.ln() };
        return gamma_p(a, -(b + 0.5 * (a - 1.0)) * ln_y);
    }
    if a > BETA_GAMMA_LIMIT * b.max(1.0) {
        return Ok(1.0 - beta_reg_xy(b, a, y, x)?);
    }
    let ln_y = if x < 0.5 { (-x).ln_1p() } else { y.ln() };
    let ln_front = a * x.ln() + b * ln_y - ln_beta(a, b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok((front * beta_cf(a, b, x)? / a).clamp(0.0, 1.0))
    } else {
        Ok((1.0 - front * beta_cf(b, a, y)? / b).clamp(0.0, 1.0))
    }
}

pub fn beta_reg(a: f64, b: f64, x: f64) -> Result<f64> {
    beta_reg_xy(a, b, x, 1.0 - x)
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence(format!("incomplete beta continued fraction a={a} b={b} x={x}")))
}

/// Root of a nondecreasing function by safeguarded Newton iteration.
///
/// `f` returns (value, derivative). The bracket is grown outward from
/// `start` in steps of `step` until it straddles zero.
pub fn monotone_root(
    mut f: impl FnMut(f64) -> Result<(f64, f64)>,
    start: f64,
    step: f64,
    lower_limit: f64,
    upper_limit: f64,
    tol: f64,
) -> Result<f64> {
    let (f0, _) = f(start)?;
    if f0 == 0.0 {
        return Ok(start);
    }
    let (mut lo, mut hi);
    if f0 < 0.0 {
        lo = start;
        let mut s = step;
        loop {
            hi = (lo + s).min(upper_limit);
            if f(hi)?.0 >= 0.0 {
                break;
            }
            if hi >= upper_limit {
                return Err(Error::NoConvergence("root not bracketed above".into()));
            }
            lo = hi;
            s *= 2.0;
        }
    } else {
        hi = start;
        let mut s = step;
        loop {
            lo = (hi - s).max(lower_limit);
            if f(lo)?.0 <= 0.0 {
                break;
            }
            if lo <= lower_limit {
                return Err(Error::NoConvergence("root not bracketed below".into()));
            }
            hi = lo;
            s *= 2.0;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let (fx, dfx) = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= tol * (1.0 + x.abs()) || hi - lo <= tol * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence("root finder exceeded iteration budget".into()))
}

/// Quantile of Gamma(shape, rate).
pub fn gamma_quantile(shape: f64, rate: f64, p: f64) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma quantile shape={shape} rate={rate} p={p}")));
    }
    let lg = ln_gamma(shape);
    // Work on t = ln z with z = rate·x; P(shape, e^t) is increasing in t.
    let f = |t: f64| -> Result<(f64, f64)> {
        let z = t.exp();
        let v = gamma_p(shape, z)? - p;
        let dens = (shape * t - z - lg).exp();
        Ok((v, dens))
    };
    let start = shape.ln();
    let t = monotone_root(f, start, 1.0, -745.0, 710.0, 1e-15)?;
    Ok(t.exp() / rate)
}

/// Quantile of Beta(a, b) returned on the log scale, ln x.
pub fn beta_log_quantile(a: f64, b: f64, p: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("beta quantile a={a} b={b} p={p}")));
    }
    let lb = ln_beta(a, b);
    let f = |t: f64| -> Result<(f64, f64)> {
        let x = t.exp();
        let y = -t.exp_m1();
        let v = beta_reg_xy(a, b, x, y)? - p;
        let dens = (a * t + (b - 1.0) * (-t.exp_m1()).ln() - lb).exp();
        Ok((v, dens))
    };
    let mean = a / (a + b);
    let start = mean.ln().min(-1e-3);
    monotone_root(f, start, 1.0, -745.0, -1e-300, 1e-14)
}
