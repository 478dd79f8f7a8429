//! Dense row-major 2-D arrays and the handful of kernels the learner needs.
//!
//! The batch dimension is always the row index, so a mini-batch forward pass
//! through a linear layer is a single [`Matrix::matmul`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics, and a matrix with zero columns has no data anyway
        let cols = self.cols.max(1);
        self.data
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                op,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    /// Standard product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("rhs with {} rows", self.cols),
                format!("{:?}", other.shape()),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "t_matmul",
                format!("rhs with {} rows", self.rows),
                format!("{:?}", other.shape()),
            ));
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "matmul_t",
                format!("rhs with {} columns", self.cols),
                format!("{:?}", other.shape()),
            ));
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let a_row = self.row(i);
            for j in 0..m {
                let b_row = other.row(j);
                let mut acc = T::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc = acc + a * b;
                }
                out.data[i * m + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
        Ok(())
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row_broadcast(&mut self, row: &Self) -> Result<()> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::dim(
                "add_row_broadcast",
                format!("(1, {})", self.cols),
                format!("{:?}", row.shape()),
            ));
        }
        let cols = self.cols;
        for r in 0..self.rows {
            for (a, &b) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(&row.data) {
                *a = *a + b;
            }
        }
        Ok(())
    }

    /// Sum over rows, giving a `1 x cols` matrix.
    pub fn column_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        out
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Stacks matrices vertically; all parts must have the same column count.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Ok(Self::zeros(0, 0));
        };
        let cols = first.cols;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dim("vstack", format!("{cols} columns"), p.cols));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows {
            return Err(Error::dim(
                "slice_rows",
                format!("range within 0..{}", self.rows),
                format!("{start}..{end}"),
            ));
        }
        Ok(Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    /// Writes `block` into rows `start..start + block.rows()`.
    pub fn set_rows(&mut self, start: usize, block: &Self) -> Result<()> {
        if block.cols != self.cols || start + block.rows > self.rows {
            return Err(Error::dim(
                "set_rows",
                format!("block fitting {:?} at row {start}", self.shape()),
                format!("{:?}", block.shape()),
            ));
        }
        let c = self.cols;
        self.data[start * c..(start + block.rows) * c].copy_from_slice(&block.data);
        Ok(())
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

    /// Index of the largest entry in each row; ties resolve to the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.row_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// Row-wise tempered softmax, `exp(z_c/τ) / Σ_j exp(z_j/τ)`.
///
/// Entries equal to `-inf` (masked classes) get probability exactly 0.
pub fn softmax_temp<T: Scalar>(logits: &Matrix<T>, tau: T) -> Result<Matrix<T>> {
    check_tau(tau)?;
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v / tau - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Row-wise log of [`softmax_temp`], computed as `z/τ - max - ln Σ exp(z/τ - max)`.
pub fn log_softmax_temp<T: Scalar>(logits: &Matrix<T>, tau: T) -> Result<Matrix<T>> {
    check_tau(tau)?;
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
        let lse = row
            .iter()
            .map(|&v| (v / tau - max).exp())
            .sum::<T>()
            .ln();
        for v in row.iter_mut() {
            *v = *v / tau - max - lse;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let b = Matrix::<f64>::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&b).unwrap(), b);

        let row = Matrix::<f64>::from_rows(&[[1.0, 2.0]]).unwrap();
        let col = Matrix::<f64>::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        assert_eq!(fast.shape(), (5, 3));
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        // transposed variants agree with the explicit transpose
        let c = random(5, 3, &mut rng);
        let lhs = a.t_matmul(&c).unwrap();
        let rhs = naive_matmul(&a.transpose(), &c);
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let lhs = c.matmul_t(&b).unwrap();
        let rhs = naive_matmul(&c, &b.transpose());
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension { .. })));
        assert!(Matrix::from_vec(2, 2, vec![1.0f64; 3]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let z = Matrix::<f64>::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let p = softmax_temp(&z, 4.0).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let z = Matrix::<f64>::from_rows(&[[2f64.ln(), 0.0]]).unwrap();
        let p = softmax_temp(&z, 1.0).unwrap();
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);

        // 2^{1/4} / (2^{1/4} + 1), evaluated at 40 digits
        let p = softmax_temp(&z, 4.0).unwrap();
        assert!((p.get(0, 0) - 0.543_213_616_862_944_9).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.456_786_383_137_055_1).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_tau() {
        let z = Matrix::<f64>::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(softmax_temp(&z, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(log_softmax_temp(&z, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn log_softmax_examples() {
        let z = Matrix::<f64>::from_rows(&[[0.0, 0.0]]).unwrap();
        let lp = log_softmax_temp(&z, 1.0).unwrap();
        for &v in lp.as_slice() {
            assert!((v + 2f64.ln()).abs() < 1e-15);
        }

        let z = Matrix::<f64>::from_rows(&[[1000.0, 0.0]]).unwrap();
        let lp = log_softmax_temp(&z, 1.0).unwrap();
        assert!(lp.is_finite());
        assert!(lp.get(0, 0).abs() < 1e-12);
        assert!((lp.get(0, 1) + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn masked_entries_get_zero_probability() {
        let z = Matrix::<f64>::from_rows(&[[1.0, f64::NEG_INFINITY, 0.5]]).unwrap();
        let p = softmax_temp(&z, 2.0).unwrap();
        assert_eq!(p.get(0, 1), 0.0);
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn works_in_single_precision() {
        let z = Matrix::<f32>::from_rows(&[[0.0, 0.0]]).unwrap();
        let p = softmax_temp(&z, 1.0).unwrap();
        assert_eq!(p.as_slice(), &[0.5f32, 0.5]);
    }

    proptest! {
        #[test]
        fn exp_log_softmax_matches_softmax(
            vals in proptest::collection::vec(-30.0f64..30.0, 12),
            tau in 0.05f64..50.0,
        ) {
            let z = Matrix::from_vec(3, 4, vals).unwrap();
            let p = softmax_temp(&z, tau).unwrap();
            let lp = log_softmax_temp(&z, tau).unwrap();
            for (a, b) in p.as_slice().iter().zip(lp.as_slice()) {
                prop_assert!((a - b.exp()).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one(
            vals in proptest::collection::vec(-100.0f64..100.0, 10),
            log_tau in -3.0f64..3.0,
        ) {
            let tau = 10f64.powf(log_tau);
            let z = Matrix::from_vec(2, 5, vals).unwrap();
            let p = softmax_temp(&z, tau).unwrap();
            prop_assert!(p.is_finite());
            for row in p.row_iter() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariant(
            vals in proptest::collection::vec(-20.0f64..20.0, 6),
            shift in -50.0f64..50.0,
            tau in 0.1f64..10.0,
        ) {
            let z = Matrix::from_vec(2, 3, vals).unwrap();
            let shifted = z.map(|v| v + shift);
            let p = softmax_temp(&z, tau).unwrap();
            let q = softmax_temp(&shifted, tau).unwrap();
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn matmul_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(3, 4, &mut rng);
            let b = random(4, 5, &mut rng);
            let c = random(5, 2, &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }
}
