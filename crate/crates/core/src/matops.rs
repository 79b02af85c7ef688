//! Dense real matrices and the two structured solvers everything else is
//! built on: the discrete Lyapunov (Stein) equation `X = FᵀXF + W` and the
//! discrete algebraic Riccati equation.
//!
//! Matrices are small (n ≤ 8 in every experiment), so the Lyapunov equation
//! is solved exactly through its Kronecker vectorization rather than by an
//! iterative scheme.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Frobenius residual tolerance for a Lyapunov solve, relative to `max(1, ‖X‖_F)`.
pub const DLYAP_RESIDUAL_TOL: f64 = 1e-10;

/// Pivot ratio below which the vectorized system counts as singular.
const PIVOT_RATIO_TOL: f64 = 1e-13;

/// Dense row/column matrix of `f64`.
///
/// Serialized as a list of rows.
#[derive(Clone, PartialEq)]
pub struct Mat(DMatrix<f64>);

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Mat(DMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Mat(DMatrix::identity(n, n) * s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Mat(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat(DMatrix::from_element(rows, cols, value))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Mat(DMatrix::from_row_slice(rows, cols, entries)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(n_rows, n_cols, &flat)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Mat(DMatrix::from_fn(rows, cols, f))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
    }

    pub fn row_major(&self) -> Vec<f64> {
        let (r, c) = self.shape();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat(self.0.transpose())
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat(&self.0 * s)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Frobenius inner product `tr(AᵀB)`.
    pub fn dot(&self, other: &Mat) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && (&self.0 - self.0.transpose()).amax() <= tol
    }

    pub fn symmetrized(&self) -> Mat {
        Mat((&self.0 + self.0.transpose()) * 0.5)
    }

    /// Cholesky succeeds, i.e. the symmetric part is positive definite.
    pub fn is_positive_definite(&self) -> bool {
        self.is_square() && self.symmetrized().0.cholesky().is_some()
    }

    /// Symmetric eigenvalues in ascending order. Only meaningful for symmetric input.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.symmetrized().0.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn inverse(&self) -> Result<Mat> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("inverse of non-square matrix".into()));
        }
        self.0
            .clone()
            .try_inverse()
            .map(Mat)
            .ok_or_else(|| Error::DimensionMismatch("singular matrix".into()))
    }

    /// Solves `self · X = rhs` by partial-pivot LU.
    pub fn solve(&self, rhs: &Mat) -> Result<Mat> {
        if !self.is_square() || self.rows() != rhs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "solve {:?} against {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        self.0
            .clone()
            .lu()
            .solve(&rhs.0)
            .map(Mat)
            .ok_or_else(|| Error::DimensionMismatch("singular system".into()))
    }

    pub fn kronecker(&self, other: &Mat) -> Mat {
        Mat(self.0.kronecker(&other.0))
    }

    pub(crate) fn inner(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{:?}", self.to_rows())
    }
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = Mat::from_rows(&rows).map_err(serde::de::Error::custom)?;
        if !m.is_finite() {
            return Err(serde::de::Error::custom("non-finite matrix entry"));
        }
        Ok(m)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Mat> for &Mat {
            type Output = Mat;
            fn $method(self, rhs: &Mat) -> Mat {
                Mat(&self.0 $op &rhs.0)
            }
        }
        impl $trait<Mat> for Mat {
            type Output = Mat;
            fn $method(self, rhs: Mat) -> Mat {
                Mat(self.0 $op rhs.0)
            }
        }
        impl $trait<&Mat> for Mat {
            type Output = Mat;
            fn $method(self, rhs: &Mat) -> Mat {
                Mat(self.0 $op &rhs.0)
            }
        }
        impl $trait<Mat> for &Mat {
            type Output = Mat;
            fn $method(self, rhs: Mat) -> Mat {
                Mat(&self.0 $op rhs.0)
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        Mat(-&self.0)
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        Mat(-self.0)
    }
}

impl Mul<f64> for &Mat {
    type Output = Mat;
    fn mul(self, s: f64) -> Mat {
        self.scale(s)
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(self, s: f64) -> Mat {
        Mat(self.0 * s)
    }
}

/// Solution of `X = FᵀXF + W`.
#[derive(Clone, Debug)]
pub struct LyapunovSolution {
    pub x: Mat,
    /// `‖X − FᵀXF − W‖_F`
    pub residual_norm: f64,
}

fn vec_col(m: &Mat) -> DMatrix<f64> {
    let n = m.rows() * m.cols();
    DMatrix::from_column_slice(n, 1, m.inner().as_slice())
}

fn unvec_col(v: &DMatrix<f64>, n: usize) -> Mat {
    Mat(DMatrix::from_column_slice(n, n, v.as_slice()))
}

pub fn lyapunov_residual(f: &Mat, w: &Mat, x: &Mat) -> f64 {
    (x - &(f.transpose() * x * f) - w).frobenius_norm()
}

/// Solves the discrete Lyapunov equation `X = FᵀXF + W`.
///
/// The `n²×n²` system `(I − Fᵀ⊗Fᵀ) vec(X) = vec(W)` is factored once and also
/// solved against `W = I`; a positive definite solution of the latter is the
/// certificate that `ρ(F) < 1`. Without it the call fails with `NotContractive`.
pub fn solve_dlyap(f: &Mat, w: &Mat) -> Result<LyapunovSolution> {
    let n = f.rows();
    if !f.is_square() || w.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "solve_dlyap: F is {:?}, W is {:?}",
            f.shape(),
            w.shape()
        )));
    }
    if !f.is_finite() || !w.is_finite() {
        return Err(Error::NotContractive("non-finite input".into()));
    }
    let ft = f.transpose();
    let big = DMatrix::identity(n * n, n * n) - ft.inner().kronecker(ft.inner());
    let lu = big.clone().lu();

    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in u.diagonal().iter() {
        lo = lo.min(d.abs());
        hi = hi.max(d.abs());
    }
    if lo.is_nan() || lo <= PIVOT_RATIO_TOL * hi {
        return Err(Error::NotContractive(format!(
            "vectorized Stein system is singular (pivot ratio {:e})",
            lo / hi
        )));
    }

    // certificate (W = I) and the requested right-hand side share one solve
    let mut rhs = DMatrix::zeros(n * n, 2);
    rhs.set_column(0, &vec_col(&Mat::identity(n)).column(0));
    rhs.set_column(1, &vec_col(w).column(0));
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NotContractive("LU solve failed".into()))?;
    // one step of iterative refinement
    let r = &rhs - &big * &sol;
    sol += lu
        .solve(&r)
        .ok_or_else(|| Error::NotContractive("LU solve failed".into()))?;

    let certificate = unvec_col(&sol.columns(0, 1).into_owned(), n).symmetrized();
    if !certificate.is_finite() || !certificate.is_positive_definite() {
        return Err(Error::NotContractive(
            "Stein equation with W = I has no positive definite solution".into(),
        ));
    }

    let mut x = unvec_col(&sol.columns(1, 1).into_owned(), n);
    if w.is_symmetric(0.0) {
        x = x.symmetrized();
    }
    if !x.is_finite() {
        return Err(Error::NotContractive("non-finite solution".into()));
    }
    let residual_norm = lyapunov_residual(f, w, &x);
    if residual_norm > DLYAP_RESIDUAL_TOL * x.frobenius_norm().max(1.0) {
        return Err(Error::NotContractive(format!(
            "residual {residual_norm:e} above tolerance"
        )));
    }
    Ok(LyapunovSolution { x, residual_norm })
}

/// Exact test for `ρ(F) < 1`: the Stein equation with `W = I` has a
/// positive definite solution.
pub fn is_contractive(f: &Mat) -> bool {
    f.is_square() && solve_dlyap(f, &Mat::identity(f.rows())).is_ok()
}

/// Spectral radius estimate `‖F^k‖^{1/k}` with `k = 2^24`, computed by
/// normalized repeated squaring. Diagnostic only.
pub fn spectral_radius_estimate(f: &Mat) -> f64 {
    const SQUARINGS: i32 = 24;
    let mut m = f.clone();
    let mut log_scale = 0.0f64;
    let mut k = 1.0f64;
    for _ in 0..SQUARINGS {
        let norm = m.frobenius_norm();
        if norm == 0.0 || !norm.is_finite() {
            return if norm == 0.0 { 0.0 } else { f64::INFINITY };
        }
        // m currently represents F^k / exp(log_scale)
        m = m.scale(1.0 / norm);
        log_scale += norm.ln();
        m = &m * &m;
        log_scale *= 2.0;
        k *= 2.0;
    }
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((log_scale + norm.ln()) / k).exp()
}

/// Result of [`solve_dare`].
#[derive(Clone, Debug)]
pub struct DareSolution {
    pub p: Mat,
    pub k: Mat,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        DareOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// `Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`
pub fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat> {
    let at = a.transpose();
    let bt_p = b.transpose() * p;
    let gain = (r + &(&bt_p * b)).solve(&(&bt_p * a))?;
    Ok((q + &(&at * p * a) - &(&at * p * b * &gain)).symmetrized())
}

pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<f64> {
    Ok((p - &riccati_map(a, b, q, r, p)?).frobenius_norm())
}

fn check_dare_dims(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<()> {
    let n = a.rows();
    let m = b.cols();
    if !a.is_square() || b.rows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    Ok(())
}

pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<DareSolution> {
    solve_dare_with(a, b, q, r, DareOptions::default())
}

/// Fixed-point (value) iteration on the Riccati map from `P₀ = Q`.
pub fn solve_dare_with(a: &Mat, b: &Mat, q: &Mat, r: &Mat, opts: DareOptions) -> Result<DareSolution> {
    check_dare_dims(a, b, q, r)?;
    let mut p = q.symmetrized();
    let mut step = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = riccati_map(a, b, q, r, &p)?;
        if !next.is_finite() {
            break;
        }
        step = (&next - &p).frobenius_norm();
        p = next;
        if step <= opts.tol {
            let bt_p = b.transpose() * &p;
            let k = (r + &(&bt_p * b)).solve(&(&bt_p * a))?;
            if !is_contractive(&(a - &(b * &k))) {
                break;
            }
            return Ok(DareSolution { p, k, iterations: it });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_step: step,
    })
}
