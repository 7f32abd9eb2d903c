//! Small dense linear-algebra kernels.
//!
//! Everything here works on tiny matrices (a few hundred rows at most), so the
//! storage is plain row-major `Vec<f64>` and lower-triangular factors are kept
//! packed row by row: row `i` occupies `data[i*(i+1)/2 ..= i*(i+1)/2 + i]`.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};
use thiserror::Error;

/// A fixed 3×3 matrix, row-major.
pub type Mat3 = [[f64; 3]; 3];

/// A fixed 2×2 matrix, row-major.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {index} = {value:e})")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    ///
    /// Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::DimensionMismatch { expected: self.cols, found: rhs.rows });
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Mat) -> Result<Mat, LinalgError> {
        self.check_same_shape(rhs)?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Mat { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, rhs: &Mat) -> Result<Mat, LinalgError> {
        self.check_same_shape(rhs)?;
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Mat { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copies the rectangular block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            out.data[i * cols..(i + 1) * cols]
                .copy_from_slice(&self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + cols]);
        }
        out
    }

    fn check_same_shape(&self, rhs: &Mat) -> Result<(), LinalgError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows * self.cols,
                found: rhs.rows * rhs.cols,
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Offset of entry `(i, j)`, `j <= i`, in packed lower-triangular storage.
#[inline]
pub const fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Number of packed entries of a `dim`×`dim` lower triangle.
#[inline]
pub const fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Lower-triangular matrix with a strictly positive diagonal, stored packed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTri {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTri {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != packed_len(dim) {
            return Err(LinalgError::DimensionMismatch { expected: packed_len(dim), found: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        for i in 0..dim {
            let d = data[packed_index(i, i)];
            if d <= 0.0 {
                return Err(LinalgError::NotPositiveDefinite { index: i, value: d });
            }
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    /// Panics on a non-positive entry.
    pub fn from_diag(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; packed_len(dim)];
        for (i, &d) in diag.iter().enumerate() {
            assert!(d > 0.0, "diagonal entries must be positive");
            data[packed_index(i, i)] = d;
        }
        Self { dim, data }
    }

    /// Takes the lower triangle of a square matrix.
    pub fn from_mat(m: &Mat) -> Result<Self, LinalgError> {
        if m.rows() != m.cols() {
            return Err(LinalgError::DimensionMismatch { expected: m.rows(), found: m.cols() });
        }
        let dim = m.rows();
        let mut data = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            data.extend_from_slice(&m.row(i)[..=i]);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Entry `(i, j)`; zero above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[packed_index(i, j)]
        }
    }

    pub fn to_mat(&self) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                m[(i, j)] = self.data[packed_index(i, j)];
            }
        }
        m
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let n = self.dim;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            let ri = &self.data[packed_index(i, 0)..=packed_index(i, i)];
            for j in 0..=i {
                let rj = &self.data[packed_index(j, 0)..=packed_index(j, j)];
                let s: f64 = ri[..=j].iter().zip(rj).map(|(a, b)| a * b).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

/// Cholesky factorization `A = L·Lᵀ` (unblocked, right-looking, no pivoting).
pub fn cholesky(a: &Mat) -> Result<LowerTri, LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::DimensionMismatch { expected: a.rows(), found: a.cols() });
    }
    let n = a.rows();
    let scale = a.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            if diff > 1e-12 * scale {
                return Err(LinalgError::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    let mut packed = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        packed.extend_from_slice(&a.row(i)[..=i]);
    }
    cholesky_packed_in_place(&mut packed, n)?;
    Ok(LowerTri { dim: n, data: packed })
}

/// In-place Cholesky on a packed lower triangle.
///
/// On success `packed` holds the factor. Only the lower triangle of the input
/// is read, so symmetry is assumed.
pub fn cholesky_packed_in_place(packed: &mut [f64], n: usize) -> Result<(), LinalgError> {
    debug_assert_eq!(packed.len(), packed_len(n));
    for k in 0..n {
        let pivot = packed[packed_index(k, k)];
        if !(pivot > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { index: k, value: pivot });
        }
        let lkk = pivot.sqrt();
        packed[packed_index(k, k)] = lkk;
        let inv = 1.0 / lkk;
        for i in k + 1..n {
            packed[packed_index(i, k)] *= inv;
        }
        // trailing update A[i][j] -= L[i][k] L[j][k], j in k+1..=i
        for i in k + 1..n {
            let lik = packed[packed_index(i, k)];
            if lik == 0.0 {
                continue;
            }
            let row_i = packed_index(i, 0);
            for j in k + 1..=i {
                let ljk = packed[packed_index(j, k)];
                packed[row_i + j] -= lik * ljk;
            }
        }
    }
    Ok(())
}

/// Solves `L·x = b` in place for a packed lower triangle.
#[inline]
pub fn forward_substitute(packed: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &packed[packed_index(i, 0)..=packed_index(i, i)];
        let mut s = b[i];
        for j in 0..i {
            s -= row[j] * b[j];
        }
        b[i] = s / row[i];
    }
}

/// Solves `Lᵀ·x = b` in place for a packed lower triangle.
#[inline]
pub fn back_substitute_transposed(packed: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let xi = b[i] / packed[packed_index(i, i)];
        b[i] = xi;
        let row = &packed[packed_index(i, 0)..packed_index(i, i)];
        for (bj, &lij) in b[..i].iter_mut().zip(row) {
            *bj -= lij * xi;
        }
    }
}

fn solve_columns(
    l: &LowerTri,
    b: &Mat,
    kernel: fn(&[f64], usize, &mut [f64]),
) -> Result<Mat, LinalgError> {
    if l.dim() != b.rows() {
        return Err(LinalgError::DimensionMismatch { expected: l.dim(), found: b.rows() });
    }
    let mut out = b.clone();
    let mut col = vec![0.0; b.rows()];
    for c in 0..b.cols() {
        for (r, v) in col.iter_mut().enumerate() {
            *v = b[(r, c)];
        }
        kernel(l.as_slice(), l.dim(), &mut col);
        for (r, v) in col.iter().enumerate() {
            out[(r, c)] = *v;
        }
    }
    Ok(out)
}

/// Solves `L·X = B`.
pub fn solve_lower(l: &LowerTri, b: &Mat) -> Result<Mat, LinalgError> {
    solve_columns(l, b, forward_substitute)
}

/// Solves `Lᵀ·X = B`.
pub fn solve_upper_transposed(l: &LowerTri, b: &Mat) -> Result<Mat, LinalgError> {
    solve_columns(l, b, back_substitute_transposed)
}

/// `log det(L·Lᵀ) = 2 Σ log Lᵢᵢ`.
pub fn logdet_from_tri(l: &LowerTri) -> f64 {
    2.0 * (0..l.dim()).map(|i| l.data[packed_index(i, i)].ln()).sum::<f64>()
}

/// Inverse of an SPD matrix through its Cholesky factor: `A⁻¹ = L⁻ᵀ L⁻¹`.
pub fn spd_inverse(a: &Mat) -> Result<Mat, LinalgError> {
    let l = cholesky(a)?;
    let linv = solve_lower(&l, &Mat::identity(a.rows()))?;
    linv.transpose().matmul(&linv)
}

/// Rotation matrix of a (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn quat_to_rotmat(q: [f64; 4]) -> Result<Mat3, LinalgError> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(LinalgError::ZeroQuaternion);
    }
    let [w, x, y, z] = q.map(|v| v / norm);
    Ok(unit_quat_to_rotmat([w, x, y, z]))
}

/// Rotation matrix of a unit quaternion; no normalization.
#[inline]
pub fn unit_quat_to_rotmat([w, x, y, z]: [f64; 4]) -> Mat3 {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[inline]
pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_to_mat(a: &Mat3) -> Mat {
    Mat::from_rows(a)
}
