//! Small dense linear algebra: matrices in row-major storage, max-norms,
//! the matrix exponential and structural checks on the drift matrix.
//!
//! Vectors are plain `&[f64]` slices. The norm used throughout is the
//! max-norm `|x| = max_i |x_i|`, and for matrices `‖M‖ = max_ij |M_ij|`.

mod expm;

pub use expm::expm_scaled;

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Tolerance below which a matrix entry still counts as nonnegative.
pub const POSITIVITY_TOL: f64 = 1e-12;

/// Largest admissible value of `‖Φ(t)‖ − e^{λt}` for a valid certificate.
pub const CERTIFICATE_TOL: f64 = 1e-10;

/// Dense real matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from row slices. Rows must be non-empty, of equal
    /// length, and hold only finite values.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        if nrows == 0 {
            return Err(Error::Dimension("matrix needs at least one row".into()));
        }
        let ncols = rows[0].as_ref().len();
        if ncols == 0 {
            return Err(Error::Dimension("matrix needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite entry {v} in row {i}")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: nrows, cols: ncols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn max_norm(&self) -> f64 {
        max_norm_mat(self)
    }

    /// Induced 1-norm (max column sum), used to pick the squaring count.
    pub fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `out = self · x`. No allocation; `out.len()` must equal `rows`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self * other)
    }

    /// `self^n` by repeated squaring.
    pub fn powi(&self, mut n: u64) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare { rows: self.rows, cols: self.cols });
        }
        let mut base = self.clone();
        let mut acc = Matrix::identity(self.rows);
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        Ok(acc)
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare { rows: self.rows, cols: self.cols });
        }
        if rhs.rows != self.rows {
            return Err(Error::Dimension("right-hand side row count differs".into()));
        }
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
                .unwrap_or(col);
            if a[pivot_row * n + col] == 0.0 {
                return Err(Error::InvalidParameter("singular matrix in linear solve".into()));
            }
            if pivot_row != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot_row * n + j);
                }
                for j in 0..m {
                    b.swap(col * m + j, pivot_row * m + j);
                }
            }
            let pivot = a[col * n + col];
            for row in col + 1..n {
                let f = a[row * n + col] / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[row * n + j] -= f * a[col * n + j];
                }
                for j in 0..m {
                    b[row * m + j] -= f * b[col * m + j];
                }
            }
        }
        let mut x = vec![0.0; n * m];
        for row in (0..n).rev() {
            for j in 0..m {
                let mut s = b[row * m + j];
                for k in row + 1..n {
                    s -= a[row * n + k] * x[k * m + j];
                }
                x[row * m + j] = s / a[row * n + row];
            }
        }
        Ok(Matrix { rows: n, cols: m, data: x })
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// `max_i |x_i|`; zero for an empty slice.
pub fn max_norm_vec(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max_ij |M_ij|`.
pub fn max_norm_mat(m: &Matrix) -> f64 {
    max_norm_vec(&m.data)
}

/// Max-norm distance between two equally long vectors.
pub fn max_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// True iff every off-diagonal entry is nonnegative.
pub fn check_cooperative(a: &Matrix) -> Result<bool> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows, cols: a.cols });
    }
    let n = a.rows;
    Ok((0..n).all(|i| (0..n).all(|j| i == j || a.get(i, j) >= 0.0)))
}

/// True iff every entry is at least `-POSITIVITY_TOL`.
pub fn positivity_check(m: &Matrix) -> bool {
    m.data.iter().all(|&v| v >= -POSITIVITY_TOL)
}

/// Empirical certificate for `‖Φ(t)‖ ≤ e^{λt}` on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityCert {
    pub lambda: f64,
    pub sample_horizon: f64,
    pub sample_count: usize,
    /// `max_k (‖Φ(t_k)‖ − e^{λ t_k})`.
    pub max_violation: f64,
    /// Sample time where `max_violation` is attained.
    pub worst_time: f64,
}

impl StabilityCert {
    pub fn is_valid(&self) -> bool {
        self.max_violation <= CERTIFICATE_TOL
    }
}

/// Samples `‖exp(tA)‖ − e^{λt}` at `samples` uniform points of `[0, horizon]`.
///
/// λ is an input claim; this validates it rather than computing a spectrum.
pub fn certify_stability(a: &Matrix, lambda: f64, horizon: f64, samples: usize) -> Result<StabilityCert> {
    if lambda >= 0.0 || !lambda.is_finite() {
        return Err(Error::NonNegativeRate(lambda));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_time = 0.0;
    for k in 0..samples {
        let t = horizon * k as f64 / (samples - 1) as f64;
        let phi = expm_scaled(a, t)?;
        let v = phi.max_norm() - (lambda * t).exp();
        if v > max_violation {
            max_violation = v;
            worst_time = t;
        }
    }
    Ok(StabilityCert { lambda, sample_horizon: horizon, sample_count: samples, max_violation, worst_time })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_5_1() -> Matrix {
        Matrix::from_rows(&[[-1.0, 1.0, 0.0], [1.0, -2.0, 0.0], [0.0, 1.0, -1.0]]).unwrap()
    }

    #[test]
    fn vector_norms() {
        assert_eq!(max_norm_vec(&[1.0, -2.0, 3.0]), 3.0);
        assert_eq!(max_norm_vec(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(max_norm_vec(&[-5.0, 4.0, -4.0]), 5.0);
    }

    #[test]
    fn matrix_norms() {
        assert_eq!(max_norm_mat(&Matrix::identity(3)), 1.0);
        let e = [(-1.0f64).exp(), (-2.0f64).exp(), (-3.0f64).exp()];
        assert_eq!(max_norm_mat(&Matrix::diag(&e)), e[0]);
        let phi = expm_scaled(&Matrix::diag(&[-1.0, -2.0, -3.0]), 1.0).unwrap();
        assert!((phi.max_norm() - 0.36787944117144233).abs() < 1e-12);
    }

    #[test]
    fn cooperativity() {
        assert!(check_cooperative(&example_5_1()).unwrap());
        assert!(check_cooperative(&Matrix::diag(&[-1.0, -2.0, -3.0])).unwrap());
        let mut a = example_5_1();
        a.set(0, 1, -1.0);
        assert!(!check_cooperative(&a).unwrap());
        assert!(matches!(
            check_cooperative(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn positivity() {
        assert!(positivity_check(&expm_scaled(&example_5_1(), 1.0).unwrap()));
        assert!(positivity_check(&Matrix::identity(3)));
        let mut m = Matrix::identity(2);
        m.set(1, 0, -0.1);
        assert!(!positivity_check(&m));
    }

    #[test]
    fn stability_certificates() {
        let l2 = (-3.0 + 5f64.sqrt()) / 2.0;
        assert!(certify_stability(&example_5_1(), l2, 10.0, 1000).unwrap().is_valid());
        let diag = Matrix::diag(&[-1.0, -2.0, -3.0]);
        assert!(certify_stability(&diag, -1.0, 10.0, 1000).unwrap().is_valid());
        let bad = certify_stability(&diag, -1.5, 10.0, 1000).unwrap();
        assert!(!bad.is_valid());
        assert!(bad.max_violation > 0.0);
        assert!(matches!(certify_stability(&diag, 0.5, 10.0, 10), Err(Error::NonNegativeRate(_))));
        assert!(matches!(certify_stability(&diag, 0.0, 10.0, 10), Err(Error::NonNegativeRate(_))));
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, -1.0, 0.0], [3.0, 0.5, 4.0]]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [-1.0, 0.25]]).unwrap();
        let b = &a * &x;
        let got = a.solve(&b).unwrap();
        assert!(max_norm_mat(&(&got - &x)) < 1e-14);
    }

    #[test]
    fn powi_matches_repeated_product() {
        let a = example_5_1().scale(0.1);
        let mut acc = Matrix::identity(3);
        for _ in 0..7 {
            acc = &acc * &a;
        }
        assert!(max_norm_mat(&(&acc - &a.powi(7).unwrap())) < 1e-15);
        assert_eq!(a.powi(0).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(Matrix::from_rows(&[[f64::NAN]]).is_err());
    }
}
