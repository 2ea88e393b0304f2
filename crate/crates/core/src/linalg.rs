//! Dense linear-algebra kernels.
//!
//! [`Matrix`] is a small row-major container used by training, attacks and
//! defenses. Decompositions (SVD, unpivoted QR, LU) are delegated to
//! `nalgebra`; the rank-revealing column-pivoted QR used for row/column
//! selection is implemented here so the pivot order is fully under our
//! control and deterministic.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Validating constructor: non-empty shape, matching length, finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for shape {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Single-column matrix.
    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`; both operands are traversed along contiguous rows.
    pub fn matmul_t(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Self {
        assert_eq!(self.rows, other.rows, "hstack row mismatch");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Vertical concatenation.
    pub fn vstack(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.cols, "vstack column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_na(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative singular-value cutoff used to decide numerical rank.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    relative_threshold: f64,
}

impl RankTolerance {
    pub fn new(relative_threshold: f64) -> Result<Self> {
        if !(relative_threshold > 0.0 && relative_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must lie in (0, 1), got {relative_threshold}"
            )));
        }
        Ok(Self { relative_threshold })
    }

    pub fn relative_threshold(&self) -> f64 {
        self.relative_threshold
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self {
            relative_threshold: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

pub fn singular_values(a: &Matrix) -> Vec<f64> {
    a.to_na().singular_values().iter().copied().collect()
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(a: &Matrix, tol: RankTolerance) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let cutoff = tol.relative_threshold * smax;
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Greedy column-pivoted Householder QR (Businger-Golub) on the columns of
/// `m`, stopped after `steps` pivots. Returns the pivot order and |R_kk|.
/// Ties in remaining column norm go to the lowest index.
fn pivoted_qr_pivots(m: &Matrix, steps: usize) -> (Vec<usize>, Vec<f64>) {
    let (nr, nc) = m.shape();
    let steps = steps.min(nr).min(nc);
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..nc).map(|j| m.column(j)).collect();
    let mut perm: Vec<usize> = (0..nc).collect();
    let mut rdiag = Vec::with_capacity(steps);

    for k in 0..steps {
        let mut best = k;
        let mut best_norm = -1.0;
        for (j, c) in cols.iter().enumerate().skip(k) {
            let norm: f64 = c[k..].iter().map(|v| v * v).sum();
            if norm > best_norm {
                best_norm = norm;
                best = j;
            }
        }
        cols.swap(k, best);
        perm.swap(k, best);

        let alpha = best_norm.sqrt();
        rdiag.push(alpha);
        if alpha == 0.0 {
            continue;
        }
        // Householder vector v = x + sign(x0)*|x| e0
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        for c in cols.iter_mut().skip(k) {
            let tail = &mut c[k..];
            let s = 2.0 * dot(&v, tail) / vnorm_sq;
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        }
    }
    (perm[..steps].to_vec(), rdiag)
}

/// Picks `target` linearly independent rows or columns, in ascending index
/// order, using the column-pivoted QR pivot sequence.
pub fn select_independent(
    a: &Matrix,
    axis: Axis,
    target: usize,
    tol: RankTolerance,
) -> Result<Vec<usize>> {
    let rank = numerical_rank(a, tol);
    if rank < target {
        return Err(Error::RankDeficient { rank, target });
    }
    if target == 0 {
        return Ok(Vec::new());
    }
    let work = match axis {
        Axis::Cols => a.clone(),
        Axis::Rows => a.transpose(),
    };
    let (mut idx, _) = pivoted_qr_pivots(&work, target);
    idx.sort_unstable();
    let sub = match axis {
        Axis::Cols => a.select_columns(&idx),
        Axis::Rows => a.select_rows(&idx),
    };
    let sub_rank = numerical_rank(&sub, tol);
    if sub_rank < target {
        return Err(Error::RankDeficient {
            rank: sub_rank,
            target,
        });
    }
    Ok(idx)
}

/// Least-squares solver with a precomputed pseudo-inverse, so that repeated
/// right-hand sides cost O(rows * cols) each.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    a: Matrix,
    pinv: Matrix,
}

impl LeastSquares {
    pub fn new(a: &Matrix) -> Self {
        Self {
            a: a.clone(),
            pinv: pseudo_inverse(a),
        }
    }

    pub fn pinv(&self) -> &Matrix {
        &self.pinv
    }

    /// Returns the minimum-norm minimiser and its squared residual.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        if b.len() != self.a.rows() {
            return Err(Error::DimensionMismatch {
                context: "least_squares rhs",
                expected: self.a.rows(),
                got: b.len(),
            });
        }
        let w = self.pinv.mul_vec(b);
        let fit = self.a.mul_vec(&w);
        let residual_sq = fit.iter().zip(b).map(|(f, y)| (f - y).powi(2)).sum();
        Ok((w, residual_sq))
    }
}

pub fn least_squares(a: &Matrix, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    if a.rows() < a.cols() {
        return Err(Error::InvalidArgument(format!(
            "least_squares needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    LeastSquares::new(a).solve(b)
}

/// Moore-Penrose pseudo-inverse via SVD; singular values below
/// `eps * max(rows, cols) * sigma_max` are treated as zero.
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    let svd = a.to_na().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = f64::EPSILON * a.rows().max(a.cols()) as f64 * smax;
    let mut pinv = DMatrix::<f64>::zeros(a.cols(), a.rows());
    for (k, &s) in sv.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let vk = vt.row(k).transpose();
        let uk = u.column(k);
        pinv += (vk * uk.transpose()) / s;
    }
    Matrix::from_na(&pinv)
}

/// Normalized leverage scores `p_i = ||U_(i)||^2 / d` of a full-column-rank matrix.
pub fn leverage_scores(a: &Matrix) -> Result<Vec<f64>> {
    let d = a.cols();
    let svd = a.to_na().svd(true, false);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = RankTolerance::default().relative_threshold * smax;
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > cutoff).count()
    };
    if rank < d {
        return Err(Error::RankDeficient { rank, target: d });
    }
    let u = svd.u.expect("u requested");
    Ok((0..a.rows())
        .map(|i| u.row(i).iter().map(|v| v * v).sum::<f64>() / d as f64)
        .collect())
}

/// Orthonormal basis of a column space, used for projection residuals
/// `min_w ||A w - x||^2`.
#[derive(Clone, Debug)]
pub struct ColumnSpace {
    // n x r, orthonormal columns, row-major
    basis: Matrix,
}

impl ColumnSpace {
    pub fn new(a: &Matrix, tol: RankTolerance) -> Self {
        let svd = a.to_na().svd(true, false);
        let u = svd.u.expect("u requested");
        let sv = &svd.singular_values;
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..sv.len())
            .filter(|&k| smax > 0.0 && sv[k] > tol.relative_threshold * smax)
            .collect();
        let basis = Matrix::from_fn(a.rows(), keep.len(), |i, j| u[(i, keep[j])]);
        Self { basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Squared distance from `x` to the column space.
    pub fn residual_sq(&self, x: &[f64]) -> f64 {
        let r = self.dim();
        let mut coef = vec![0.0; r];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (c, q) in coef.iter_mut().zip(self.basis.row(i)) {
                    *c += xi * q;
                }
            }
        }
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        let proj_sq: f64 = coef.iter().map(|c| c * c).sum();
        // Cancellation is benign for large residuals; fall back to the explicit
        // difference when the two terms nearly agree.
        let fast = norm_sq - proj_sq;
        if fast > 1e-6 * norm_sq {
            return fast;
        }
        x.iter()
            .enumerate()
            .map(|(i, &xi)| (xi - dot(self.basis.row(i), &coef)).powi(2))
            .sum()
    }

    /// Residual of a 0/1 vector given as bytes.
    pub fn residual_sq_bits(&self, bits: &[u8]) -> f64 {
        let x: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        self.residual_sq(&x)
    }
}

/// Seeded Haar-like random orthogonal matrix: QR of a Gaussian matrix with
/// the signs of diag(R) folded into Q.
pub fn random_orthogonal(dim: usize, seed: u64) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(Matrix::from_na(&q))
}

/// Solves `a x = b` column-wise for square `a` via LU; `None` if singular.
pub fn solve_square(a: &Matrix, b: &Matrix) -> Option<Matrix> {
    let lu = a.to_na().lu();
    lu.solve(&b.to_na()).map(|x| Matrix::from_na(&x))
}
