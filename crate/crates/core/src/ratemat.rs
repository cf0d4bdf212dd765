//! Rate matrices of continuous-time substitution processes.
//!
//! States use the nucleotide ordering A, G, C, T for K = 4; every type here is
//! generic over the alphabet size.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{expm_taylor, general_eigenvalues, solve, symmetric_eigen, SquareMatrix};
use crate::scalar::Real;

/// Tolerance floor that stays meaningful for single precision.
#[inline]
pub(crate) fn tol<T: Real>(base: f64) -> T {
    T::lit(base).max(T::epsilon() * T::lit(64.0))
}

/// A probability vector over the alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition<T: Real = f64> {
    probs: Vec<T>,
}

impl<T: Real> Composition<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidComposition("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < T::zero()) {
            return Err(Error::InvalidComposition(format!("entry {p} not a probability")));
        }
        let sum: T = probs.iter().copied().sum();
        if (sum - T::one()).abs() > tol::<T>(1e-12) {
            return Err(Error::InvalidComposition(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Rescales nonnegative weights onto the simplex.
    pub fn normalized(weights: Vec<T>) -> Result<Self> {
        let sum: T = weights.iter().copied().sum();
        if !(sum > T::zero()) || weights.iter().any(|w| *w < T::zero()) {
            return Err(Error::InvalidComposition("weights must be nonnegative with positive sum".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![T::one() / T::lit(k as f64); k] }
    }

    #[inline]
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn is_interior(&self) -> bool {
        self.probs.iter().all(|&p| p > T::zero())
    }

    /// Purine total, A + G.
    pub fn purines(&self) -> T {
        self.probs[0] + self.probs[1]
    }

    /// Pyrimidine total, C + T.
    pub fn pyrimidines(&self) -> T {
        self.probs[2] + self.probs[3]
    }
}

impl TryFrom<Vec<f64>> for Composition<f64> {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Composition::new(v)
    }
}

impl From<Composition<f64>> for Vec<f64> {
    fn from(c: Composition<f64>) -> Self {
        c.probs
    }
}

/// Symmetric off-diagonal exchangeabilities, stored as the strict upper
/// triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeabilitySet<T: Real = f64> {
    k: usize,
    values: Vec<T>,
}

impl<T: Real> ExchangeabilitySet<T> {
    pub fn new(k: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != k * (k - 1) / 2 {
            return Err(Error::InvalidExchangeability(format!(
                "{} values for alphabet of size {k}, expected {}",
                values.len(),
                k * (k - 1) / 2
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidExchangeability(format!("nonpositive value {v}")));
        }
        Ok(Self { k, values })
    }

    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(k * (k - 1) / 2);
        for u in 0..k {
            for v in u + 1..k {
                values.push(f(u, v));
            }
        }
        Self::new(k, values)
    }

    pub fn uniform(k: usize) -> Self {
        Self { k, values: vec![T::one(); k * (k - 1) / 2] }
    }

    /// TN93 exchangeabilities: C-T = `rho1`, A-G = `rho2`, transversions 1.
    pub fn tn93(rho1: T, rho2: T) -> Result<Self> {
        Self::from_fn(4, |u, v| match (u, v) {
            (2, 3) => rho1,
            (0, 1) => rho2,
            _ => T::one(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> T {
        assert!(u != v, "exchangeabilities are off-diagonal");
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        let offset = a * (2 * self.k - a - 1) / 2;
        self.values[offset + (b - a - 1)]
    }
}

/// Instantaneous rate matrix: nonnegative off-diagonals, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix<T: Real = f64> {
    m: SquareMatrix<T>,
}

impl<T: Real> RateMatrix<T> {
    /// Validates a generator matrix.
    pub fn new(m: SquareMatrix<T>) -> Result<Self> {
        let n = m.dim();
        if n < 2 {
            return Err(Error::InvalidRateMatrix("dimension below 2".into()));
        }
        let scale = m.max_abs().max(T::one());
        for u in 0..n {
            for v in 0..n {
                let x = m[(u, v)];
                if !x.is_finite() {
                    return Err(Error::InvalidRateMatrix(format!("entry ({u},{v}) not finite")));
                }
                if u != v && x < T::zero() {
                    return Err(Error::InvalidRateMatrix(format!("negative off-diagonal ({u},{v}) = {x}")));
                }
            }
            if m[(u, u)] > T::zero() {
                return Err(Error::InvalidRateMatrix(format!("positive diagonal at {u}")));
            }
            let rs: T = m.row(u).iter().copied().sum();
            if rs.abs() > tol::<T>(1e-10) * scale {
                return Err(Error::InvalidRateMatrix(format!("row {u} sums to {rs}")));
            }
        }
        Ok(Self { m })
    }

    /// Builds from off-diagonal rates, filling the diagonal with negated row sums.
    pub fn from_off_diagonal(mut m: SquareMatrix<T>) -> Result<Self> {
        let n = m.dim();
        for u in 0..n {
            m[(u, u)] = T::zero();
            let s: T = m.row(u).iter().copied().sum();
            m[(u, u)] = -s;
        }
        Self::new(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    #[inline]
    pub fn entries(&self) -> &SquareMatrix<T> {
        &self.m
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.m[(u, v)]
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(Error::InvalidParameter(format!("scale {c} must be positive")));
        }
        Ok(Self { m: self.m.scale(c) })
    }

    pub fn min_off_diagonal(&self) -> T {
        let n = self.dim();
        (0..n)
            .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
            .map(|(u, v)| self.m[(u, v)])
            .fold(T::infinity(), T::min)
    }

    /// Mean substitution rate under `pi`: −Σ π_u q_uu.
    pub fn expected_rate(&self, pi: &Composition<T>) -> T {
        -(0..self.dim()).map(|u| pi.probs()[u] * self.m[(u, u)]).sum::<T>()
    }

    pub fn cast<U: Real>(&self) -> RateMatrix<U> {
        RateMatrix { m: self.m.cast() }
    }
}

/// Row-stochastic matrix exp(ℓQ).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T: Real = f64> {
    m: SquareMatrix<T>,
    branch_length: T,
}

impl<T: Real> TransitionMatrix<T> {
    #[inline]
    pub fn entries(&self) -> &SquareMatrix<T> {
        &self.m
    }

    #[inline]
    pub fn branch_length(&self) -> T {
        self.branch_length
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.m[(u, v)]
    }

    pub(crate) fn from_raw(mut m: SquareMatrix<T>, branch_length: T) -> Self {
        let n = m.dim();
        for u in 0..n {
            for v in 0..n {
                if m[(u, v)] < T::zero() {
                    m[(u, v)] = T::zero();
                }
            }
        }
        Self { m, branch_length }
    }
}

/// Q = SΠ with S built from `rho` and Π = diag(`pi`).
pub fn build_gtr<T: Real>(rho: &ExchangeabilitySet<T>, pi: &Composition<T>) -> Result<RateMatrix<T>> {
    let k = rho.dim();
    if pi.dim() != k {
        return Err(Error::Dimension(format!("composition of size {} for {k} states", pi.dim())));
    }
    let p = pi.probs();
    let m = SquareMatrix::from_fn(k, |u, v| if u == v { T::zero() } else { rho.get(u, v) * p[v] });
    RateMatrix::from_off_diagonal(m)
}

/// TN93 with the transversion exchangeability fixed to one.
pub fn build_tn93<T: Real>(rho1: T, rho2: T, pi: &Composition<T>) -> Result<RateMatrix<T>> {
    if pi.dim() != 4 {
        return Err(Error::Dimension("TN93 is a nucleotide model".into()));
    }
    build_gtr(&ExchangeabilitySet::tn93(rho1, rho2)?, pi)
}

/// Solves πQ = 0 with one equation replaced by the normalisation Σπ = 1.
pub fn stationary_distribution<T: Real>(q: &RateMatrix<T>) -> Result<Composition<T>> {
    let n = q.dim();
    let qt = q.entries().transpose();
    let mut a = qt.clone();
    for j in 0..n {
        a[(n - 1, j)] = T::one();
    }
    let mut rhs = vec![T::zero(); n];
    rhs[n - 1] = T::one();
    let mut pi = solve(&a, &rhs)?;
    let t = tol::<T>(1e-10);
    if pi.iter().any(|&p| p < -t || !p.is_finite()) {
        return Err(Error::Singular("stationary solution leaves the simplex".into()));
    }
    for p in pi.iter_mut() {
        if *p < T::zero() {
            *p = T::zero();
        }
    }
    let resid = q.entries().left_mul_vec(&pi).into_iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if resid > t * q.entries().max_abs().max(T::one()) {
        return Err(Error::Singular(format!("residual {resid} in πQ = 0")));
    }
    Composition::normalized(pi)
}

/// Checks π_u q_uv = π_v q_vu for every pair.
pub fn satisfies_detailed_balance<T: Real>(q: &SquareMatrix<T>, pi: &[T], tolerance: T) -> bool {
    let n = q.dim();
    let scale = q.max_abs().max(T::one());
    (0..n).all(|u| (u + 1..n).all(|v| (pi[u] * q[(u, v)] - pi[v] * q[(v, u)]).abs() <= tolerance * scale))
}

/// Recovers the symmetric S with Q = SΠ, diagonal included.
pub fn reversible_factorization<T: Real>(q: &RateMatrix<T>, pi: &Composition<T>) -> Result<SquareMatrix<T>> {
    let n = q.dim();
    if pi.dim() != n {
        return Err(Error::Dimension("composition size differs from matrix".into()));
    }
    if !pi.is_interior() {
        return Err(Error::InvalidComposition("zero entry in composition".into()));
    }
    if !satisfies_detailed_balance(q.entries(), pi.probs(), tol(1e-9)) {
        return Err(Error::NotReversible("detailed balance violated".into()));
    }
    let p = pi.probs();
    Ok(SquareMatrix::from_fn(n, |u, v| q.get(u, v) / p[v]))
}

/// Symmetrised eigensystem of a reversible rate matrix.
///
/// Q = Π^{-1/2} V Λ Vᵀ Π^{1/2}, so any polynomial in Q shares V and maps Λ
/// entrywise; transition matrices for many branch lengths or transformed
/// matrices reuse one decomposition.
#[derive(Debug, Clone)]
pub struct ReversibleEigen<T: Real = f64> {
    eigenvalues: Vec<T>,
    /// Rows scaled by π^{-1/2}: left factor Π^{-1/2} V.
    left: SquareMatrix<T>,
    /// Vᵀ Π^{1/2}.
    right: SquareMatrix<T>,
    pi: Composition<T>,
}

impl<T: Real> ReversibleEigen<T> {
    pub fn new(q: &RateMatrix<T>, pi: &Composition<T>) -> Result<Self> {
        let n = q.dim();
        if pi.dim() != n || !pi.is_interior() {
            return Err(Error::InvalidComposition("reversible eigensystem needs an interior composition".into()));
        }
        if !satisfies_detailed_balance(q.entries(), pi.probs(), tol(1e-9)) {
            return Err(Error::NotReversible("detailed balance violated".into()));
        }
        let sq: Vec<T> = pi.probs().iter().map(|p| p.sqrt()).collect();
        // Symmetrise explicitly so roundoff cannot leak asymmetry into Jacobi.
        let b = SquareMatrix::from_fn(n, |u, v| {
            let a = q.get(u, v) * sq[u] / sq[v];
            let c = q.get(v, u) * sq[v] / sq[u];
            (a + c) * T::lit(0.5)
        });
        let (eigenvalues, v) = symmetric_eigen(&b)?;
        let left = SquareMatrix::from_fn(n, |u, k| v[(u, k)] / sq[u]);
        let right = SquareMatrix::from_fn(n, |k, w| v[(w, k)] * sq[w]);
        Ok(Self { eigenvalues, left, right, pi: pi.clone() })
    }

    #[inline]
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    #[inline]
    pub fn composition(&self) -> &Composition<T> {
        &self.pi
    }

    /// exp(ℓ f(Q)) where f acts on each eigenvalue.
    pub fn transition_with(&self, ell: T, f: impl Fn(T) -> T) -> Result<TransitionMatrix<T>> {
        if ell < T::zero() {
            return Err(Error::NegativeBranchLength(ell.as_f64()));
        }
        let n = self.eigenvalues.len();
        let mut out = vec![T::zero(); n * n];
        self.fill_transition(ell, f, &mut out);
        let m = SquareMatrix::from_fn(n, |u, v| out[u * n + v]);
        Ok(TransitionMatrix::from_raw(m, ell))
    }

    pub fn transition(&self, ell: T) -> Result<TransitionMatrix<T>> {
        self.transition_with(ell, |l| l)
    }

    /// Writes exp(ℓ f(Q)) row-major into `out` without validation.
    pub(crate) fn fill_transition(&self, ell: T, f: impl Fn(T) -> T, out: &mut [T]) {
        let n = self.eigenvalues.len();
        let ex: Vec<T> = self.eigenvalues.iter().map(|&l| (ell * f(l)).exp()).collect();
        for u in 0..n {
            for v in 0..n {
                let mut s = T::zero();
                for (k, &e) in ex.iter().enumerate() {
                    s += self.left[(u, k)] * e * self.right[(k, v)];
                }
                out[u * n + v] = if s < T::zero() { T::zero() } else { s };
            }
        }
    }
}

/// P(ℓ) = exp(ℓQ).
///
/// Matrices in detailed balance with their stationary distribution go through
/// the symmetrised eigendecomposition; anything else uses Taylor scaling and
/// squaring.
pub fn transition_matrix<T: Real>(q: &RateMatrix<T>, ell: T) -> Result<TransitionMatrix<T>> {
    if ell < T::zero() || !ell.is_finite() {
        return Err(Error::NegativeBranchLength(ell.as_f64()));
    }
    if ell == T::zero() {
        return Ok(TransitionMatrix::from_raw(SquareMatrix::identity(q.dim()), ell));
    }
    if let Ok(pi) = stationary_distribution(q) {
        if pi.is_interior() && satisfies_detailed_balance(q.entries(), pi.probs(), tol(1e-9)) {
            return ReversibleEigen::new(q, &pi)?.transition(ell);
        }
    }
    Ok(transition_matrix_taylor(q, ell))
}

/// Generic-path exponential, also used as the cross-check oracle.
pub fn transition_matrix_taylor<T: Real>(q: &RateMatrix<T>, ell: T) -> TransitionMatrix<T> {
    TransitionMatrix::from_raw(expm_taylor(&q.entries().scale(ell)), ell)
}

/// Spectrum sorted by descending real part, plus the convergence rate ν.
#[derive(Debug, Clone)]
pub struct SpectralInfo<T: Real = f64> {
    pub eigenvalues: Vec<Complex<T>>,
    /// ν = −Re(λ₂).
    pub nu: T,
}

pub fn spectral_info<T: Real>(q: &RateMatrix<T>) -> Result<SpectralInfo<T>> {
    let mut eig: Vec<Complex<T>> = match stationary_distribution(q) {
        Ok(pi) if pi.is_interior() && satisfies_detailed_balance(q.entries(), pi.probs(), tol(1e-9)) => {
            ReversibleEigen::new(q, &pi)?.eigenvalues().iter().map(|&l| Complex::new(l, T::zero())).collect()
        }
        _ => general_eigenvalues(q.entries())?,
    };
    eig.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal));
    let scale = q.entries().max_abs().max(T::one());
    if eig[0].norm() > tol::<T>(1e-10) * scale {
        return Err(Error::Eigen(format!("leading eigenvalue {} is not zero", eig[0])));
    }
    eig[0] = Complex::new(T::zero(), T::zero());
    let nu = -eig[1].re;
    if !(nu > T::zero()) {
        return Err(Error::Eigen("no spectral gap: matrix is reducible".into()));
    }
    Ok(SpectralInfo { eigenvalues: eig, nu })
}
