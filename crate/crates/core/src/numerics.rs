//! Dense real matrices and symmetric eigensolvers.
//!
//! Problem sizes in this crate are tiny (state dimensions of a few units), so
//! everything here is a straightforward dense row-major implementation. The
//! eigensolver is cyclic Jacobi, which is unconditionally stable for
//! symmetric input and deterministic for a fixed input.

use std::fmt;
use std::ops::{Add, Index, Mul, Neg, Sub};

use thiserror::Error;

/// Default relative tolerance for semidefinite comparisons.
pub const DEFAULT_PSD_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 50;
const JACOBI_REL_OFF_DIAG: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("Jacobi iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
}

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input; use
    /// [`Matrix::try_from_rows`] for untrusted data.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        Self::try_from_rows(rows).expect("rows must be rectangular and finite")
    }

    pub fn try_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            if row.len() != c {
                return Err(NumericsError::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Builds an `n x k` matrix whose columns are the given vectors.
    pub fn from_columns(n: usize, columns: &[Vec<f64>]) -> Self {
        let k = columns.len();
        let mut m = Self::zeros(n, k);
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), n, "column length mismatch");
            for (i, v) in col.iter().enumerate() {
                m.data[i * k + j] = *v;
            }
        }
        m
    }

    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                m.data[i * v.len() + j] = a * b;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Self, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "vector length mismatch");
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    /// `selfᵀ · M · self`, the congruence used for every reduced block.
    pub fn congruence(&self, m: &Matrix) -> Self {
        let t = self.transpose();
        &(&t * m) * self
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn symmetrize(&self) -> Self {
        debug_assert!(self.is_square());
        let n = self.rows;
        let mut s = self.clone();
        for i in 0..n {
            for j in 0..n {
                s.data[i * n + j] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        s
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = self.get(i, j) - self.get(j, i);
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        let k = end - start;
        let mut m = Self::zeros(self.rows, k);
        for i in 0..self.rows {
            for j in 0..k {
                m.data[i * k + j] = self.get(i, start + j);
            }
        }
        m
    }

    /// Horizontal concatenation `[self | rhs]`.
    pub fn hcat(&self, rhs: &Matrix) -> Self {
        assert_eq!(self.rows, rhs.rows, "row count mismatch");
        let c = self.cols + rhs.cols;
        let mut m = Self::zeros(self.rows, c);
        for i in 0..self.rows {
            m.data[i * c..i * c + self.cols].copy_from_slice(self.row(i));
            m.data[i * c + self.cols..(i + 1) * c].copy_from_slice(rhs.row(i));
        }
        m
    }

    /// Sub-block `rows r0..r1`, `cols c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        let mut m = Self::zeros(r1 - r0, c1 - c0);
        for i in r0..r1 {
            for j in c0..c1 {
                m.data[(i - r0) * (c1 - c0) + (j - c0)] = self.get(i, j);
            }
        }
        m
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl<'a> Mul<&'a Matrix> for &'a Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &'a Matrix) -> Matrix {
        self.matmul(rhs).expect("matrix product dimension mismatch")
    }
}

impl<'a> Add<&'a Matrix> for &'a Matrix {
    type Output = Matrix;
    fn add(self, rhs: &'a Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Matrix> for &'a Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &'a Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, ordered like `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl SymEigResult {
    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.eigenvectors;
        let lambda = Matrix::diag(&self.eigenvalues);
        &(q * &lambda) * &q.transpose()
    }
}

fn check_square_finite(a: &Matrix) -> Result<(), NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    Ok(())
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first; an asymmetry above
/// `1e-12·‖A‖_F` is rejected.
pub fn sym_eig(a: &Matrix) -> Result<SymEigResult, NumericsError> {
    check_square_finite(a)?;
    let n = a.rows;
    let scale = a.frobenius_norm();
    let asym = a.asymmetry();
    if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(NumericsError::NotSymmetric { asymmetry: asym });
    }
    let mut m = a.symmetrize();
    let mut q = Matrix::identity(n);
    if n == 0 || scale == 0.0 {
        return Ok(SymEigResult {
            eigenvalues: vec![0.0; n],
            eigenvectors: q,
        });
    }

    let threshold = JACOBI_REL_OFF_DIAG * scale;
    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) < threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m.get(p, r);
                if apr == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let arr = m.get(r, r);
                // Rutishauser's stable rotation.
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut q, p, r, c, s);
            }
        }
    }
    if !converged && off_diagonal_norm(&m) >= threshold {
        return Err(NumericsError::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let eigenvalues = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, new_j, q.get(i, old_j));
        }
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors: vectors,
    })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m.get(i, j) * m.get(i, j);
            }
        }
    }
    acc.sqrt()
}

// Applies the rotation J(p, r) as m <- Jᵀ m J, q <- q J.
fn rotate(m: &mut Matrix, q: &mut Matrix, p: usize, r: usize, c: f64, s: f64) {
    let n = m.rows;
    for k in 0..n {
        let mkp = m.get(k, p);
        let mkr = m.get(k, r);
        m.set(k, p, c * mkp - s * mkr);
        m.set(k, r, s * mkp + c * mkr);
    }
    for k in 0..n {
        let mpk = m.get(p, k);
        let mrk = m.get(r, k);
        m.set(p, k, c * mpk - s * mrk);
        m.set(r, k, s * mpk + c * mrk);
    }
    for k in 0..n {
        let qkp = q.get(k, p);
        let qkr = q.get(k, r);
        q.set(k, p, c * qkp - s * qkr);
        q.set(k, r, s * qkp + c * qkr);
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = P`.
pub fn cholesky(p: &Matrix) -> Result<Matrix, NumericsError> {
    check_square_finite(p)?;
    let n = p.rows;
    let p = p.symmetrize();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = p.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(NumericsError::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = p.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

// Solves L X = B for lower-triangular L.
fn forward_substitute(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows;
    let mut x = Matrix::zeros(n, b.cols);
    for c in 0..b.cols {
        for i in 0..n {
            let mut s = b.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}

/// Generalized eigenvalues of the pencil `(S, P)`, ascending.
///
/// Reduces with `P = L Lᵀ` and diagonalizes `L⁻¹ S L⁻ᵀ`.
pub fn gen_sym_eig(s: &Matrix, p: &Matrix) -> Result<Vec<f64>, NumericsError> {
    check_square_finite(s)?;
    check_square_finite(p)?;
    if s.rows != p.rows {
        return Err(NumericsError::DimensionMismatch(format!(
            "pencil ({}x{}, {}x{})",
            s.rows, s.cols, p.rows, p.cols
        )));
    }
    let pe = sym_eig(&p.symmetrize())?;
    if pe.min() <= 1e-12 * p.frobenius_norm() {
        return Err(NumericsError::NotPositiveDefinite {
            index: 0,
            pivot: pe.min(),
        });
    }
    let l = cholesky(p)?;
    let y = forward_substitute(&l, &s.symmetrize());
    let c = forward_substitute(&l, &y.transpose());
    Ok(sym_eig(&c.symmetrize())?.eigenvalues)
}

/// Largest generalized eigenvalue of `(S, P)`.
pub fn gen_sym_eig_max(s: &Matrix, p: &Matrix) -> Result<f64, NumericsError> {
    Ok(*gen_sym_eig(s, p)?.last().unwrap_or(&f64::NEG_INFINITY))
}

/// `M ⪰ 0` up to `tol·max(1, ‖M‖_F)`.
pub fn psd_check(m: &Matrix, tol: f64) -> Result<bool, NumericsError> {
    Ok(psd_margin(m, tol)? >= 0.0)
}

/// `λ_min(M) + tol·max(1, ‖M‖_F)`; nonnegative iff [`psd_check`] passes.
pub fn psd_margin(m: &Matrix, tol: f64) -> Result<f64, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let eig = sym_eig(&m.symmetrize())?;
    Ok(eig.min() + tol * m.frobenius_norm().max(1.0))
}
