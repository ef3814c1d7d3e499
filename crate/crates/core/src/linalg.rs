//! Minimal dense linear algebra, generic over a scalar type.
//!
//! The whole inference path (kernels, Kalman recursions, ELBO) is written
//! against the [`Scalar`] trait so the same code runs on plain `f64` and on
//! forward-mode dual numbers ([`Dual`]), which is how hyperparameter
//! gradients are obtained. Matrices here stay small (state dimension is
//! `M_s * d`, at most a few hundred), so a simple row-major `Vec` layout is
//! sufficient.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Scalar abstraction: `f64` for plain evaluation, [`Dual`] for gradients.
///
/// Comparisons and branches always act on the primal value so that the dual
/// evaluation follows the exact same code path as the `f64` one.
pub trait Scalar:
    Clone
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn from_f64(x: f64) -> Self;
    /// Primal (value) part.
    fn val(&self) -> f64;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn val(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
}

/// Forward-mode dual number carrying a dense gradient vector.
///
/// An empty gradient vector means "constant" (zero tangent in every
/// direction); this lets `from_f64` stay ignorant of the gradient length.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: Vec<f64>,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, g: Vec::new() }
    }

    /// Seed variable `i` of `n` with unit tangent.
    pub fn variable(v: f64, i: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        Dual { v, g }
    }

    fn zip(a: &[f64], b: &[f64], ca: f64, cb: f64) -> Vec<f64> {
        let n = a.len().max(b.len());
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let x = a.get(i).copied().unwrap_or(0.0);
            let y = b.get(i).copied().unwrap_or(0.0);
            *o = ca * x + cb * y;
        }
        out
    }

    fn map(g: &[f64], c: f64) -> Vec<f64> {
        g.iter().map(|x| c * x).collect()
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v + rhs.v,
            g: Dual::zip(&self.g, &rhs.g, 1.0, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v - rhs.v,
            g: Dual::zip(&self.g, &rhs.g, 1.0, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            v: self.v * rhs.v,
            g: Dual::zip(&self.g, &rhs.g, rhs.v, self.v),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        // d(a/b) = da/b - a db/b^2
        let inv = 1.0 / rhs.v;
        Dual {
            v: self.v * inv,
            g: Dual::zip(&self.g, &rhs.g, inv, -self.v * inv * inv),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            v: -self.v,
            g: Dual::map(&self.g, -1.0),
        }
    }
}

impl Scalar for Dual {
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    fn val(&self) -> f64 {
        self.v
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        Dual {
            v: e,
            g: Dual::map(&self.g, e),
        }
    }
    fn ln(&self) -> Self {
        Dual {
            v: self.v.ln(),
            g: Dual::map(&self.g, 1.0 / self.v),
        }
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        Dual {
            v: s,
            g: Dual::map(&self.g, 0.5 / s),
        }
    }
    fn abs(&self) -> Self {
        if self.v < 0.0 {
            -self.clone()
        } else {
            self.clone()
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    nrows: usize,
    ncols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Mat {
            nrows,
            ncols,
            data: vec![S::zero(); nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                data.push(f(i, j));
            }
        }
        Mat { nrows, ncols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows > 0 { rows[0].len() } else { 0 };
        Mat::from_fn(nrows, ncols, |i, j| rows[i][j].clone())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn t(&self) -> Mat<S> {
        Mat::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)].clone())
    }

    pub fn matmul(&self, rhs: &Mat<S>) -> Mat<S> {
        assert_eq!(self.ncols, rhs.nrows, "matmul shape mismatch");
        let mut out: Mat<S> = Mat::zeros(self.nrows, rhs.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)].clone();
                for j in 0..rhs.ncols {
                    out[(i, j)] = out[(i, j)].clone() + a.clone() * rhs[(k, j)].clone();
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.ncols, v.len(), "mat_vec shape mismatch");
        let mut out = vec![S::zero(); self.nrows];
        for i in 0..self.nrows {
            let mut acc = S::zero();
            for j in 0..self.ncols {
                acc = acc + self[(i, j)].clone() * v[j].clone();
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, rhs: &Mat<S>) -> Mat<S> {
        assert_eq!((self.nrows, self.ncols), (rhs.nrows, rhs.ncols));
        Mat::from_fn(self.nrows, self.ncols, |i, j| {
            self[(i, j)].clone() + rhs[(i, j)].clone()
        })
    }

    pub fn sub(&self, rhs: &Mat<S>) -> Mat<S> {
        assert_eq!((self.nrows, self.ncols), (rhs.nrows, rhs.ncols));
        Mat::from_fn(self.nrows, self.ncols, |i, j| {
            self[(i, j)].clone() - rhs[(i, j)].clone()
        })
    }

    pub fn scale(&self, c: S) -> Mat<S> {
        Mat::from_fn(self.nrows, self.ncols, |i, j| {
            c.clone() * self[(i, j)].clone()
        })
    }

    /// (M + Mᵀ)/2; applied after covariance updates.
    pub fn symmetrized(&self) -> Mat<S> {
        assert_eq!(self.nrows, self.ncols);
        let half = S::from_f64(0.5);
        Mat::from_fn(self.nrows, self.ncols, |i, j| {
            half.clone() * (self[(i, j)].clone() + self[(j, i)].clone())
        })
    }

    pub fn trace(&self) -> S {
        assert_eq!(self.nrows, self.ncols);
        let mut acc = S::zero();
        for i in 0..self.nrows {
            acc = acc + self[(i, i)].clone();
        }
        acc
    }

    /// Cholesky factorization M = LLᵀ. Fails (rather than regularizing) on a
    /// non positive definite pivot, naming the pivot index.
    pub fn cholesky(&self) -> Result<Chol<S>> {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows;
        let mut l: Mat<S> = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = self[(i, j)].clone();
                for k in 0..j {
                    acc = acc - l[(i, k)].clone() * l[(j, k)].clone();
                }
                if i == j {
                    if acc.val() <= 0.0 || !acc.val().is_finite() {
                        return Err(Error::numerical(
                            format!("cholesky pivot {i}"),
                            format!("non-positive pivot {}", acc.val()),
                        ));
                    }
                    l[(i, j)] = acc.sqrt();
                } else {
                    l[(i, j)] = acc / l[(j, j)].clone();
                }
            }
        }
        Ok(Chol { l })
    }

    /// Kronecker product self ⊗ rhs.
    pub fn kron(&self, rhs: &Mat<S>) -> Mat<S> {
        let (p, q) = (rhs.nrows, rhs.ncols);
        Mat::from_fn(self.nrows * p, self.ncols * q, |i, j| {
            self[(i / p, j / q)].clone() * rhs[(i % p, j % q)].clone()
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|x| x.val().abs())
            .fold(0.0, f64::max)
    }
}

impl<S> std::ops::Index<(usize, usize)> for Mat<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        debug_assert!(i < self.nrows && j < self.ncols);
        &self.data[i * self.ncols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Mat<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        debug_assert!(i < self.nrows && j < self.ncols);
        &mut self.data[i * self.ncols + j]
    }
}

/// Lower-triangular Cholesky factor with solve helpers.
#[derive(Clone, Debug)]
pub struct Chol<S> {
    l: Mat<S>,
}

impl<S: Scalar> Chol<S> {
    pub fn factor(&self) -> &Mat<S> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solve L y = b.
    pub fn solve_lower(&self, b: &[S]) -> Vec<S> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y = vec![S::zero(); n];
        for i in 0..n {
            let mut acc = b[i].clone();
            for k in 0..i {
                acc = acc - self.l[(i, k)].clone() * y[k].clone();
            }
            y[i] = acc / self.l[(i, i)].clone();
        }
        y
    }

    /// Solve Lᵀ x = b.
    pub fn solve_upper(&self, b: &[S]) -> Vec<S> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x = vec![S::zero(); n];
        for i in (0..n).rev() {
            let mut acc = b[i].clone();
            for k in i + 1..n {
                acc = acc - self.l[(k, i)].clone() * x[k].clone();
            }
            x[i] = acc / self.l[(i, i)].clone();
        }
        x
    }

    /// Solve (LLᵀ) x = b.
    pub fn solve_vec(&self, b: &[S]) -> Vec<S> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solve (LLᵀ) X = B column by column.
    pub fn solve_mat(&self, b: &Mat<S>) -> Mat<S> {
        let mut out = Mat::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<S> = (0..b.nrows()).map(|i| b[(i, j)].clone()).collect();
            let x = self.solve_vec(&col);
            for i in 0..b.nrows() {
                out[(i, j)] = x[i].clone();
            }
        }
        out
    }

    /// log |LLᵀ| = 2 Σ log L_ii.
    pub fn log_det(&self) -> S {
        let mut acc = S::zero();
        for i in 0..self.dim() {
            acc = acc + self.l[(i, i)].clone().ln();
        }
        S::from_f64(2.0) * acc
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + x.clone() * y.clone();
    }
    acc
}

pub fn vec_add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x.clone() + y.clone())
        .collect()
}

pub fn vec_sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x.clone() - y.clone())
        .collect()
}

pub fn vec_scale<S: Scalar>(a: &[S], c: S) -> Vec<S> {
    a.iter().map(|x| c.clone() * x.clone()).collect()
}

/// Quadratic form vᵀ M v.
pub fn quad_form<S: Scalar>(m: &Mat<S>, v: &[S]) -> S {
    dot(v, &m.mat_vec(v))
}

/// Solve A x = b by LU with partial pivoting (f64 only; used for the
/// thin-plate-spline saddle system, which is symmetric but indefinite).
pub fn lu_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut lu = a.clone();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        // pivot
        let mut piv = col;
        let mut best = lu[(col, col)].abs();
        for r in col + 1..n {
            let v = lu[(r, col)].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-12 {
            return Err(Error::numerical(
                format!("lu pivot {col}"),
                "singular system".to_string(),
            ));
        }
        if piv != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(piv, j)];
                lu[(piv, j)] = tmp;
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let f = lu[(r, col)] / lu[(col, col)];
            lu[(r, col)] = f;
            for j in col + 1..n {
                lu[(r, j)] -= f * lu[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    // back substitution
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= lu[(i, j)] * x[j];
        }
        x[i] /= lu[(i, i)];
    }
    Ok(x)
}

/// Convert an f64 matrix into any scalar type (constants).
pub fn mat_from_f64<S: Scalar>(m: &Mat<f64>) -> Mat<S> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| S::from_f64(m[(i, j)]))
}

/// Extract the primal part of a generic matrix.
pub fn mat_val<S: Scalar>(m: &Mat<S>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].val())
}
