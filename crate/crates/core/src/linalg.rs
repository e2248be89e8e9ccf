//! Dense row-major matrices and the handful of kernels the alignment code needs:
//! products, Frobenius norms, a one-sided Jacobi SVD and seeded random rotations.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::rng;

/// Maximum number of Jacobi sweeps before the SVD reports non-convergence.
pub const SVD_MAX_SWEEPS: usize = 100;
/// Relative off-diagonal threshold: a column pair is orthogonal once
/// `|a_i . a_j| <= SVD_TOL * |a_i| * |a_j|`.
pub const SVD_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                write!(f, "{:>12.6} ", self[(r, c)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{} values cannot fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(alloc::format!(
                "non-finite entry at flat index {i}"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Standard-normal entries from a seeded generator.
    pub fn random_normal(rows: usize, cols: usize, rng: &mut rng::SeededRng) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        rng::fill_normal(rng, &mut m.data, 1.0);
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(shape_err!(
                "cannot multiply {}x{} by {}x{}",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(
            self.rows,
            self.cols,
            rhs.cols,
            1.0,
            (&self.data, self.cols as isize, 1),
            (&rhs.data, rhs.cols as isize, 1),
            0.0,
            (&mut out.data, rhs.cols as isize, 1),
        );
        Ok(out)
    }

    /// `selfᵀ * rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(shape_err!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            1.0,
            (&self.data, 1, self.cols as isize),
            (&rhs.data, rhs.cols as isize, 1),
            0.0,
            (&mut out.data, rhs.cols as isize, 1),
        );
        Ok(out)
    }

    /// `self * rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(shape_err!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows,
                self.cols,
                rhs.rows,
                rhs.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(
            self.rows,
            self.cols,
            rhs.rows,
            1.0,
            (&self.data, self.cols as isize, 1),
            (&rhs.data, 1, rhs.cols as isize),
            0.0,
            (&mut out.data, rhs.rows as isize, 1),
        );
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(shape_err!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                rhs.shape()
            ));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * rhs`.
    pub fn add_scaled_assign(&mut self, s: f64, rhs: &Matrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(shape_err!("axpy on {:?} and {:?}", self.shape(), rhs.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// `A / ‖A‖_F`.
    pub fn frobenius_normalize(&self) -> Result<Matrix> {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::Degenerate("cannot normalise an all-zero matrix".into()));
        }
        Ok(self.scale(1.0 / norm))
    }

    /// `‖selfᵀ self − I‖_F`, the distance from orthonormal columns.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.t_matmul(self).expect("square gram");
        gram.sub(&Matrix::identity(self.cols)).expect("same shape").frobenius_norm()
    }

    /// Columns `indices` of `self`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.cols) {
            return Err(shape_err!("column {bad} out of range for {} columns", self.cols));
        }
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(indices.iter().map(|&i| row[i]));
        }
        Ok(Matrix { rows: self.rows, cols: indices.len(), data })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(shape_err!("vstack of matrices with differing column counts"));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Strided view: (data, row stride, column stride).
pub(crate) type View<'a> = (&'a [f64], isize, isize);
pub(crate) type ViewMut<'a> = (&'a mut [f64], isize, isize);

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

/// `C = alpha * A(m×k) * B(k×n) + beta * C` on strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: ViewMut<'_>,
) {
    assert!(a.1 >= 0 && a.2 >= 0 && b.1 >= 0 && b.2 >= 0 && c.1 >= 0 && c.2 >= 0);
    assert!(a.0.len() >= span(m, k, a.1, a.2));
    assert!(b.0.len() >= span(k, n, b.1, b.2));
    assert!(c.0.len() >= span(m, n, c.1, c.2));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

/// Thin singular value decomposition `A = U · diag(S) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × k` with orthonormal columns.
    pub u: Matrix,
    /// `k` singular values, non-negative and non-increasing.
    pub s: Vec<f64>,
    /// `cols × k` with orthonormal columns.
    pub v: Matrix,
    /// Number of Jacobi sweeps used.
    pub sweeps: usize,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.s.iter().enumerate() {
                us[(r, c)] *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn rotate_pair(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

fn split_pair(buf: &mut [f64], len: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = buf.split_at_mut(j * len);
    (&mut lo[i * len..(i + 1) * len], &mut hi[..len])
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Works on the columns of `A` (or of `Aᵀ` when `A` is wide), orthogonalising column pairs
/// with plane rotations until every pair is orthogonal to within [`SVD_TOL`].
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u, sweeps: t.sweeps });
    }
    svd_tall(a)
}

fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (r, c) = a.shape();
    if let Some(i) = a.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Degenerate(alloc::format!("non-finite entry at flat index {i}")));
    }
    if c == 0 {
        return Ok(Svd { u: Matrix::zeros(r, 0), s: Vec::new(), v: Matrix::zeros(0, 0), sweeps: 0 });
    }
    // column-major working copies
    let mut w = vec![0.0; r * c];
    for row in 0..r {
        for col in 0..c {
            w[col * r + row] = a[(row, col)];
        }
    }
    let mut v = vec![0.0; c * c];
    for i in 0..c {
        v[i * c + i] = 1.0;
    }
    let mut norms: Vec<f64> = (0..c).map(|j| dot(&w[j * r..(j + 1) * r], &w[j * r..(j + 1) * r])).collect();

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < SVD_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for i in 0..c - 1 {
            for j in i + 1..c {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (wi, wj) = split_pair(&mut w, r, i, j);
                let gamma = dot(wi, wj);
                if math::abs(gamma) <= SVD_TOL * math::sqrt(alpha) * math::sqrt(beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (math::abs(zeta) + math::hypot(1.0, zeta));
                let cs = 1.0 / math::hypot(1.0, t);
                let sn = cs * t;
                rotate_pair(wi, wj, cs, sn);
                norms[i] = (alpha - t * gamma).max(0.0);
                norms[j] = beta + t * gamma;
                let (vi, vj) = split_pair(&mut v, c, i, j);
                rotate_pair(vi, vj, cs, sn);
            }
        }
        // resynchronise the incrementally updated norms
        for (j, n) in norms.iter_mut().enumerate() {
            *n = dot(&w[j * r..(j + 1) * r], &w[j * r..(j + 1) * r]);
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(alloc::format!(
            "Jacobi SVD did not converge within {SVD_MAX_SWEEPS} sweeps"
        )));
    }

    let sigma: Vec<f64> = norms.iter().map(|&n| math::sqrt(n)).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));
    let smax = sigma[order[0]];
    // Columns this small carry no reliable direction; their left vectors are rebuilt
    // as an orthonormal completion instead of normalising rounding noise.
    let floor = smax * (r.max(c) as f64) * f64::EPSILON * 16.0;

    let mut u = Matrix::zeros(r, c);
    let mut vout = Matrix::zeros(c, c);
    let mut s = Vec::with_capacity(c);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s.push(sigma[j]);
        for row in 0..c {
            vout[(row, k)] = v[j * c + row];
        }
        if sigma[j] > floor && sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            for row in 0..r {
                u[(row, k)] = w[j * r + row] * inv;
            }
        } else {
            missing.push(k);
        }
    }
    if !missing.is_empty() {
        complete_orthonormal(&mut u, &missing);
    }
    Ok(Svd { u, s, v: vout, sweeps })
}

/// Fills the listed columns of `m` with unit vectors orthogonal to all other columns.
fn complete_orthonormal(m: &mut Matrix, missing: &[usize]) {
    let (r, c) = m.shape();
    let mut filled: Vec<usize> = (0..c).filter(|k| !missing.contains(k)).collect();
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            assert!(candidate < r, "orthonormal completion ran out of basis vectors");
            let mut x = vec![0.0; r];
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj: f64 = (0..r).map(|i| m[(i, f)] * x[i]).sum();
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi -= proj * m[(i, f)];
                    }
                }
            }
            let norm = math::sqrt(dot(&x, &x));
            if norm > 1e-6 {
                for (i, xi) in x.iter().enumerate() {
                    m[(i, k)] = xi / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}

/// Seeded Haar-random orthogonal `n × n` matrix.
///
/// Gram–Schmidt (applied twice) on a standard-normal matrix. The triangular factor's
/// diagonal is positive by construction, which pins the column signs.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed);
    random_orthogonal_with(n, &mut rng)
}

pub fn random_orthogonal_with(n: usize, rng: &mut rng::SeededRng) -> Matrix {
    assert!(n >= 1, "random_orthogonal needs n >= 1");
    let g = Matrix::random_normal(n, n, rng);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| g.column(j)).collect();
    for j in 0..n {
        let (done, rest) = cols.split_at_mut(j);
        let x = &mut rest[0];
        for _ in 0..2 {
            for q in done.iter() {
                let p = dot(q, x);
                for (xi, qi) in x.iter_mut().zip(q) {
                    *xi -= p * qi;
                }
            }
        }
        let norm = math::sqrt(dot(x, x));
        for xi in x.iter_mut() {
            *xi /= norm;
        }
    }
    Matrix::from_fn(n, n, |r, c| cols[c][r])
}
