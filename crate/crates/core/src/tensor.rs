//! Dense row-major matrices with fixed-order reductions.
//!
//! Batches are stored with one sample per column, so a minibatch of `N`
//! inputs of dimension `D` is a `D x N` matrix.
//!
//! Every reduction in this module accumulates its terms in a fixed order
//! with separate multiply and add (no fused multiply-add, no reassociation).
//! Results are therefore bit-identical across runs and across vector widths,
//! and `diag_sq_mean(x)` reproduces the diagonal of `outer_mean(x, x)` exactly.

use std::fmt;

use crate::error::{shape_err, CopiError, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

/// Distribution for [`rand_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Uniform on `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    ScaledUniform {
        fan_in: usize,
    },
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
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

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        const TILE: usize = 32;
        for i0 in (0..self.rows).step_by(TILE) {
            for j0 in (0..self.cols).step_by(TILE) {
                for i in i0..(i0 + TILE).min(self.rows) {
                    for j in j0..(j0 + TILE).min(self.cols) {
                        out.data[j * self.rows + i] = self.data[i * self.cols + j];
                    }
                }
            }
        }
        out
    }

    /// Copies the listed columns, in order, into a new matrix.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = &mut out.data[i * idx.len()..(i + 1) * idx.len()];
            for (d, &j) in dst.iter_mut().zip(idx) {
                *d = src[j];
            }
        }
        out
    }

    /// Copies the contiguous column range `start..end`.
    pub fn column_range(&self, start: usize, end: usize) -> Matrix {
        let w = end - start;
        let mut out = Matrix::zeros(self.rows, w);
        for i in 0..self.rows {
            out.data[i * w..(i + 1) * w].copy_from_slice(&self.row(i)[start..end]);
        }
        out
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hcat(parts: &[Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(shape_err("hcat", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same("zip_map", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    /// `self += s * other`
    pub fn add_scaled_assign(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same("add_scaled_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Right-multiplies by `diag(d)`: column `j` is scaled by `d[j]`.
    pub fn scale_columns(&self, d: &[f64]) -> Result<Matrix> {
        if d.len() != self.cols {
            return Err(shape_err(
                "scale_columns",
                format!("{} scales for {} columns", d.len(), self.cols),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            for (v, &s) in row.iter_mut().zip(d) {
                *v *= s;
            }
        }
        Ok(out)
    }

    /// Left-multiplies by `diag(d)`: row `i` is scaled by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Result<Matrix> {
        if d.len() != self.rows {
            return Err(shape_err(
                "scale_rows",
                format!("{} scales for {} rows", d.len(), self.rows),
            ));
        }
        let mut out = self.clone();
        for (row, &s) in out.data.chunks_mut(self.cols.max(1)).zip(d) {
            for v in row {
                *v *= s;
            }
        }
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v * v)
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry in each column; ties resolve to the lowest row.
    pub fn argmax_columns(&self) -> Vec<usize> {
        let mut best = vec![0usize; self.cols];
        for j in 0..self.cols {
            let mut bv = f64::NEG_INFINITY;
            for i in 0..self.rows {
                let v = self.get(i, j);
                if v > bv {
                    bv = v;
                    best[j] = i;
                }
            }
        }
        best
    }

    fn check_same(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(())
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err(
            "matmul",
            format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, &b.data, &mut c.data);
    Ok(c)
}

/// `aᵀ * b` without the caller materialising the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(shape_err(
            "matmul_tn",
            format!("({}x{})ᵀ * {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    matmul(&a.transpose(), b)
}

/// `a * bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(shape_err(
            "matmul_nt",
            format!("{}x{} * ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    matmul(a, &b.transpose())
}

/// Batch mean of outer products, `(1/N) Σₙ z⁽ⁿ⁾ x⁽ⁿ⁾ᵀ`, for column batches.
pub fn outer_mean(z: &Matrix, x: &Matrix) -> Result<Matrix> {
    if z.cols != x.cols {
        return Err(shape_err(
            "outer_mean",
            format!("batch sizes {} and {}", z.cols, x.cols),
        ));
    }
    if z.cols == 0 {
        return Err(CopiError::InvalidArgument(
            "outer_mean of an empty batch".into(),
        ));
    }
    let n = z.cols as f64;
    let mut c = matmul_nt(z, x)?;
    for v in &mut c.data {
        *v /= n;
    }
    Ok(c)
}

/// Batch mean of squared entries per row, `mean[x_i²]`.
pub fn row_sq_mean(x: &Matrix) -> Result<Vec<f64>> {
    if x.cols == 0 {
        return Err(CopiError::InvalidArgument(
            "mean over an empty batch".into(),
        ));
    }
    let n = x.cols as f64;
    Ok((0..x.rows)
        .map(|i| {
            let mut s = 0.0;
            for &v in x.row(i) {
                s += v * v;
            }
            s / n
        })
        .collect())
}

/// `diag(mean[x²])` as a square matrix.
pub fn diag_sq_mean(x: &Matrix) -> Result<Matrix> {
    Ok(Matrix::from_diag(&row_sq_mean(x)?))
}

/// Random matrix with i.i.d. entries drawn from `dist`.
pub fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize, dist: Init) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(CopiError::InvalidArgument(format!(
            "random matrix must be non-empty, got {rows}x{cols}"
        )));
    }
    let (lo, hi) = match dist {
        Init::Uniform { lo, hi } => {
            if lo == hi {
                return Ok(Matrix::from_fn(rows, cols, |_, _| lo));
            }
            if !(lo < hi) {
                return Err(CopiError::InvalidArgument(format!(
                    "uniform bounds must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
        Init::ScaledUniform { fan_in } => {
            if fan_in == 0 {
                return Err(CopiError::InvalidArgument("fan_in must be positive".into()));
            }
            let b = (1.0 / fan_in as f64).sqrt();
            (-b, b)
        }
    };
    Ok(Matrix::from_fn(rows, cols, |_, _| rng.uniform(lo, hi)))
}

const MR: usize = 4;
const NR: usize = 16;

/// `c = a * b` for row-major `a: m x k`, `b: k x n`. `c` must be zeroed.
///
/// Each output entry is accumulated as `((0 + a0*b0) + a1*b1) + ...` in
/// increasing `k`. Packing and the register tile only change which entries
/// are in flight together, never the order of an individual sum; padded
/// lanes are zero and their results are discarded.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let m_blocks = m.div_ceil(MR);
    // a_pack[blk][p][r] = a[blk*MR + r][p]
    let mut a_pack = vec![0.0f64; m_blocks * k * MR];
    for blk in 0..m_blocks {
        let dst = &mut a_pack[blk * k * MR..(blk + 1) * k * MR];
        for r in 0..MR.min(m - blk * MR) {
            let src = &a[(blk * MR + r) * k..(blk * MR + r + 1) * k];
            for (p, &v) in src.iter().enumerate() {
                dst[p * MR + r] = v;
            }
        }
    }
    let mut b_pack = vec![0.0f64; k * NR];
    for j in (0..n).step_by(NR) {
        let w = NR.min(n - j);
        if w < NR {
            b_pack.iter_mut().for_each(|v| *v = 0.0);
        }
        for p in 0..k {
            b_pack[p * NR..p * NR + w].copy_from_slice(&b[p * n + j..p * n + j + w]);
        }
        for blk in 0..m_blocks {
            let ap = &a_pack[blk * k * MR..(blk + 1) * k * MR];
            let acc = micro_kernel(k, ap, &b_pack);
            for r in 0..MR.min(m - blk * MR) {
                let i = blk * MR + r;
                c[i * n + j..i * n + j + w].copy_from_slice(&acc[r][..w]);
            }
        }
    }
}

#[inline(always)]
fn micro_kernel(k: usize, ap: &[f64], bp: &[f64]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (a4, brow) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(k) {
        for r in 0..MR {
            let av = a4[r];
            for c in 0..NR {
                acc[r][c] += av * brow[c];
            }
        }
    }
    acc
}
