//! Dense square-matrix kernels sized for substitution models (K = 4, 20, 61).

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense square matrix.
#[derive(Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds from row slices; every row must have the same length as the row count.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {n}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "matmul dimension mismatch");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect() }
    }

    /// Row-vector times matrix.
    pub fn left_mul_vec(&self, v: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Maximum absolute row sum (induced infinity norm).
    pub fn norm_inf(&self) -> T {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn cast<U: Real>(&self) -> SquareMatrix<U> {
        SquareMatrix { n: self.n, data: self.data.iter().map(|x| U::lit(x.as_f64())).collect() }
    }
}

impl<T> Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for SquareMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for SquareMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut l = f.debug_list();
        for i in 0..self.n {
            l.entry(&&self.data[i * self.n..(i + 1) * self.n]);
        }
        l.finish()
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve<T: Real>(a: &SquareMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension(format!("rhs has {} entries, expected {n}", b.len())));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(T::min_positive_value());
    let tiny = scale * T::epsilon() * T::lit(n as f64);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap();
        if m[(pivot, col)].abs() <= tiny {
            return Err(Error::Singular(format!("pivot {col} vanishes")));
        }
        if pivot != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = t;
            }
            x.swap(col, pivot);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / p;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(r, j)] -= f * v;
            }
            let xc = x[col];
            x[r] -= f * xc;
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in col + 1..n {
            s -= m[(col, j)] * x[j];
        }
        x[col] = s / m[(col, col)];
    }
    Ok(x)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and a matrix whose columns are the matching orthonormal
/// eigenvectors.
pub fn symmetric_eigen<T: Real>(a: &SquareMatrix<T>) -> Result<(Vec<T>, SquareMatrix<T>)> {
    let n = a.dim();
    let mut m = a.clone();
    let mut v = SquareMatrix::identity(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= T::epsilon() * T::epsilon() * diag.max(T::min_positive_value()) {
            let vals = (0..n).map(|i| m[(i, i)]).collect();
            return Ok((vals, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                // Negligible next to both diagonal entries: drop it rather
                // than rotate by an angle that rounds to nothing.
                let g = T::lit(100.0) * apq.abs();
                if m[(p, p)].abs() + g == m[(p, p)].abs() && m[(q, q)].abs() + g == m[(q, q)].abs() {
                    m[(p, q)] = T::zero();
                    m[(q, p)] = T::zero();
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                // the rotation annihilates this pair exactly in exact arithmetic
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Eigen("Jacobi iteration did not converge".into()))
}

/// Eigenvalues of a general real matrix.
///
/// Householder reduction to upper Hessenberg form followed by single-shift
/// complex QR iterations with Wilkinson shifts and deflation.
pub fn general_eigenvalues<T: Real>(a: &SquareMatrix<T>) -> Result<Vec<Complex<T>>> {
    let n = a.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("non-finite matrix entry".into()));
    }
    let hess = hessenberg(a);
    let mut h: Vec<Vec<Complex<T>>> =
        (0..n).map(|i| hess.row(i).iter().map(|&x| Complex::new(x, T::zero())).collect()).collect();
    let mut eig = Vec::with_capacity(n);
    let eps = T::epsilon();
    let mut hi = n - 1;
    let mut iter = 0usize;
    let scale = a.max_abs().max(T::min_positive_value());
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let s = h[l][l].norm() + h[l - 1][l - 1].norm();
            let s = if s == T::zero() { scale } else { s };
            if h[l][l - 1].norm() <= eps * s {
                h[l][l - 1] = Complex::new(T::zero(), T::zero());
                break;
            }
            l -= 1;
        }
        if l == hi {
            eig.push(h[hi][hi]);
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        if iter > 60 * n {
            return Err(Error::Eigen("QR iteration did not converge".into()));
        }
        let mu = if iter % 11 == 10 {
            // exceptional shift
            h[hi][hi] + Complex::new(h[hi][hi - 1].norm() * T::lit(0.75), T::zero())
        } else {
            wilkinson_shift(h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi])
        };
        for i in l..=hi {
            h[i][i] -= mu;
        }
        let mut rots = Vec::with_capacity(hi - l);
        for k in l..hi {
            let x = h[k][k];
            let y = h[k + 1][k];
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (c, s) = if r == T::zero() {
                (Complex::new(T::one(), T::zero()), Complex::new(T::zero(), T::zero()))
            } else {
                (x / r, y / r)
            };
            for j in k..=hi {
                let p = h[k][j];
                let q = h[k + 1][j];
                h[k][j] = c.conj() * p + s.conj() * q;
                h[k + 1][j] = c * q - s * p;
            }
            rots.push((c, s));
        }
        for (idx, k) in (l..hi).enumerate() {
            let (c, s) = rots[idx];
            let top = (k + 2).min(hi);
            for row in h.iter_mut().take(top + 1).skip(l) {
                let p = row[k];
                let q = row[k + 1];
                row[k] = p * c + q * s;
                row[k + 1] = q * c.conj() - p * s.conj();
            }
        }
        for i in l..=hi {
            h[i][i] += mu;
        }
    }
    eig.push(h[0][0]);
    Ok(eig)
}

fn wilkinson_shift<T: Real>(a: Complex<T>, b: Complex<T>, c: Complex<T>, d: Complex<T>) -> Complex<T> {
    let half = T::lit(0.5);
    let tr = (a + d) * half;
    let det = a * d - b * c;
    let disc = (tr * tr - det).sqrt();
    let l1 = tr + disc;
    let l2 = tr - disc;
    if (l1 - d).norm() < (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

fn hessenberg<T: Real>(a: &SquareMatrix<T>) -> SquareMatrix<T> {
    let n = a.dim();
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        let norm: T = (k + 1..n).map(|i| h[(i, k)] * h[(i, k)]).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let alpha = if x0 >= T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k + 1..n).map(|i| h[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm: T = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        let two = T::lit(2.0);
        // H <- (I - 2vv^T) H
        for j in 0..n {
            let dot: T = v.iter().enumerate().map(|(t, &vt)| vt * h[(k + 1 + t, j)]).sum();
            for (t, &vt) in v.iter().enumerate() {
                h[(k + 1 + t, j)] -= two * vt * dot;
            }
        }
        // H <- H (I - 2vv^T)
        for i in 0..n {
            let dot: T = v.iter().enumerate().map(|(t, &vt)| h[(i, k + 1 + t)] * vt).sum();
            for (t, &vt) in v.iter().enumerate() {
                h[(i, k + 1 + t)] -= two * vt * dot;
            }
        }
    }
    h
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm_taylor<T: Real>(a: &SquareMatrix<T>) -> SquareMatrix<T> {
    let n = a.dim();
    let norm = a.norm_inf();
    let mut squarings = 0u32;
    let half = T::lit(0.5);
    let mut scaled_norm = norm;
    while scaled_norm > half {
        scaled_norm *= half;
        squarings += 1;
    }
    let a = a.scale(T::lit(0.5f64.powi(squarings as i32)));
    let mut result = SquareMatrix::identity(n);
    let mut term = SquareMatrix::identity(n);
    for k in 1..40 {
        term = term.matmul(&a).scale(T::one() / T::lit(k as f64));
        result = result.add(&term);
        if term.max_abs() <= T::epsilon() * result.max_abs() * T::lit(1e-3) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    result
}
