//! Dense row-major `f64` matrices.
//!
//! This is the sole numeric carrier of the crate: inputs, frozen base
//! weights, adapter factors, chain matrices, deltas, and gradients are all
//! `Matrix` values. Everything is plain 64-bit arithmetic in a fixed
//! (row-major) evaluation order, so identical inputs give bitwise-identical
//! outputs on every platform. Performance is deliberately naive; the dims
//! this crate targets are tiny.
//!
//! Orientation convention: inputs are row vectors and layers multiply on
//! the right, `y = x · W`, so a weight mapping `d_in -> d_out` is stored
//! as `d_in × d_out` and `fan_in` is the row count.

use crate::error::{Error, Result};
use crate::linalg::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix. `rows` and `cols` must be positive.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Rectangular identity: ones on the main diagonal, zeros elsewhere.
    pub fn identity(rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    /// Build from a row-major data vector.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidArgument("empty matrix".to_string()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".to_string()));
        }
        let data = rows.iter().flatten().copied().collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// Entries i.i.d. uniform on `[lo, hi)`, drawn row-major.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngState) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in &mut m.data {
            *v = rng.uniform(lo, hi);
        }
        m
    }

    /// Kaiming-uniform initialization: entries i.i.d. uniform on `[-b, b]`
    /// with `b = sqrt(6 / fan_in)` and `fan_in = rows` (the input-feature
    /// dimension under the `y = x·W` convention). The bound composes the
    /// ReLU gain `sqrt(2)` with the uniform variance factor `sqrt(3)`.
    pub fn kaiming_uniform(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        let bound = kaiming_bound(rows);
        Matrix::uniform(rows, cols, -bound, bound, rng)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// New matrix from a subset of rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Standard matrix product. Inner dimensions must agree.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a_ik = self.data[i * self.cols + k];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entrywise sum.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Entrywise scale by a constant.
    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Largest absolute entrywise difference; 0 iff the values compare equal.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exact bit-for-bit equality (distinguishes -0.0 from 0.0, unlike `==`).
    pub fn bit_equal(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }
}

/// The Kaiming-uniform bound `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Product of a slice of matrices, left to right. An empty slice yields
/// the `identity_dim` square identity.
pub fn product(factors: &[&Matrix], identity_dim: usize) -> Result<Matrix> {
    match factors.split_first() {
        None => Ok(Matrix::identity(identity_dim, identity_dim)),
        Some((first, rest)) => {
            let mut acc = (*first).clone();
            for f in rest {
                acc = acc.matmul(f)?;
            }
            Ok(acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        Matrix::uniform(rows, cols, -1.0, 1.0, rng)
    }

    #[test]
    fn matmul_hand_example() {
        // [[1,2],[3,4]] x [[5,6],[7,8]]: row 1 = (1*5+2*7, 1*6+2*8),
        // row 2 = (3*5+4*7, 3*6+4*8).
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        let expected = Matrix::from_rows(&[vec![19.0, 22.0], vec![43.0, 50.0]]).unwrap();
        assert_eq!(c, expected);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let mut rng = RngState::new(1);
        let m = random_matrix(3, 3, &mut rng);
        let eye = Matrix::identity(3, 3);
        assert_eq!(eye.matmul(&m).unwrap(), m);
        assert_eq!(m.matmul(&eye).unwrap(), m);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut rng = RngState::new(2);
        let z = Matrix::zeros(2, 3);
        let m = random_matrix(3, 4, &mut rng);
        assert_eq!(z.matmul(&m).unwrap(), Matrix::zeros(2, 4));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn transpose_shapes_and_involution() {
        let mut rng = RngState::new(3);
        let m = random_matrix(2, 5, &mut rng);
        let t = m.transpose();
        assert_eq!(t.shape(), (5, 2));
        assert_eq!(t.transpose(), m);

        let eye = Matrix::identity(4, 4);
        assert_eq!(eye.transpose(), eye);

        let row = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let col = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(row.transpose(), col);
    }

    #[test]
    fn product_transpose_identity() {
        // (AB)^T == B^T A^T, exact up to association of identical sums.
        let mut rng = RngState::new(4);
        for _ in 0..20 {
            let a = random_matrix(4, 6, &mut rng);
            let b = random_matrix(6, 3, &mut rng);
            let lhs = a.matmul(&b).unwrap().transpose();
            let rhs = b.transpose().matmul(&a.transpose()).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn matmul_associativity_within_tolerance() {
        let mut rng = RngState::new(5);
        for _ in 0..20 {
            let a = random_matrix(8, 32, &mut rng);
            let b = random_matrix(32, 16, &mut rng);
            let c = random_matrix(16, 8, &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.frobenius_norm().max(1.0);
            assert!(left.max_abs_diff(&right).unwrap() <= 1e-12 * scale);
        }
    }

    #[test]
    fn kaiming_bound_values() {
        // sqrt(6/1024) and sqrt(6/6).
        assert!((kaiming_bound(1024) - 0.0765465544619743).abs() < 1e-15);
        assert_eq!(kaiming_bound(6), 1.0);
    }

    #[test]
    fn kaiming_draws_respect_bound() {
        let mut rng = RngState::new(42);
        let m = Matrix::kaiming_uniform(1024, 16, &mut rng);
        let b = kaiming_bound(1024);
        assert!(m.as_slice().iter().all(|v| (-b..=b).contains(v)));

        let mut rng = RngState::new(43);
        let m = Matrix::kaiming_uniform(6, 1, &mut rng);
        assert!(m.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn kaiming_empirical_mean_near_zero() {
        // 10^5 draws; the mean must sit within 3 standard errors of 0,
        // where one draw has variance b^2/3.
        let mut rng = RngState::new(7);
        let n = 100_000usize;
        let fan_in = 50;
        let m = Matrix::kaiming_uniform(fan_in, n / fan_in, &mut rng);
        let b = kaiming_bound(fan_in);
        let mean = m.as_slice().iter().sum::<f64>() / n as f64;
        let se = (b * b / 3.0 / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean {mean} vs 3*se {}", 3.0 * se);
    }

    #[test]
    fn kaiming_deterministic_for_fixed_seed() {
        let mut r1 = RngState::new(42);
        let mut r2 = RngState::new(42);
        let m1 = Matrix::kaiming_uniform(8, 8, &mut r1);
        let m2 = Matrix::kaiming_uniform(8, 8, &mut r2);
        assert!(m1.bit_equal(&m2));
    }

    #[test]
    fn max_abs_diff_basics() {
        let mut rng = RngState::new(9);
        let m = random_matrix(4, 4, &mut rng);
        assert_eq!(m.max_abs_diff(&m).unwrap(), 0.0);

        let zeros = Matrix::zeros(2, 2);
        let ones = Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(zeros.max_abs_diff(&ones).unwrap(), 1.0);

        let a = Matrix::from_rows(&[vec![1.0, 5.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(a.max_abs_diff(&b).unwrap(), 2.0);

        assert!(zeros.max_abs_diff(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn product_of_empty_slice_is_identity() {
        let p = product(&[], 3).unwrap();
        assert_eq!(p, Matrix::identity(3, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix_strategy(
            rows: std::ops::RangeInclusive<usize>,
            cols: std::ops::RangeInclusive<usize>,
        ) -> impl Strategy<Value = Matrix> {
            (rows, cols).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-1.0..1.0f64, r * c)
                    .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
            })
        }

        proptest! {
            #[test]
            fn transpose_is_an_involution(m in matrix_strategy(1..=8, 1..=8)) {
                prop_assert_eq!(m.transpose().transpose(), m);
            }

            #[test]
            fn product_transposes_reversed(
                a in matrix_strategy(1..=6, 1..=6),
                data in proptest::collection::vec(-1.0..1.0f64, 6 * 6),
                cols in 1..=6usize,
            ) {
                let b = Matrix::from_vec(a.cols(), cols, data[..a.cols() * cols].to_vec()).unwrap();
                let lhs = a.matmul(&b).unwrap().transpose();
                let rhs = b.transpose().matmul(&a.transpose()).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-14);
            }
        }
    }
}
