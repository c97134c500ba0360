//! Small dense linear algebra: a row-major matrix and Kronecker helpers.

use crate::scalar::Real;
use std::ops::{Index, IndexMut};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size, size);
        for i in 0..size {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * vi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d = *d + a * b;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Dense Kronecker product `a ⊗ b`.
pub fn kron<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// `(a ⊗ I_p) v` without forming the Kronecker product.
///
/// `v` is viewed as `a.cols()` stacked blocks of length `p`.
pub fn kron_identity_mul<T: Real>(a: &Matrix<T>, p: usize, v: &[T]) -> Vec<T> {
    assert_eq!(v.len(), a.cols() * p);
    let mut out = vec![T::zero(); a.rows() * p];
    for i in 0..a.rows() {
        let dst = &mut out[i * p..(i + 1) * p];
        for (j, &w) in a.row(i).iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            for (d, &s) in dst.iter_mut().zip(&v[j * p..(j + 1) * p]) {
                *d = *d + w * s;
            }
        }
    }
    out
}

/// `(aᵀ ⊗ I_p) v` without forming the Kronecker product.
pub fn kron_identity_tr_mul<T: Real>(a: &Matrix<T>, p: usize, v: &[T]) -> Vec<T> {
    assert_eq!(v.len(), a.rows() * p);
    let mut out = vec![T::zero(); a.cols() * p];
    for i in 0..a.rows() {
        let src = &v[i * p..(i + 1) * p];
        for (j, &w) in a.row(i).iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            for (d, &s) in out[j * p..(j + 1) * p].iter_mut().zip(src) {
                *d = *d + w * s;
            }
        }
    }
    out
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot vanishes or the result is not finite.
pub fn solve_dense<T: Real>(mut a: Matrix<T>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
        if a[(piv, k)] == T::zero() || !a[(piv, k)].is_finite() {
            return None;
        }
        if piv != k {
            for c in 0..n {
                let tmp = a[(k, c)];
                a[(k, c)] = a[(piv, c)];
                a[(piv, c)] = tmp;
            }
            b.swap(k, piv);
        }
        for i in k + 1..n {
            let m = a[(i, k)] / a[(k, k)];
            if m == T::zero() {
                continue;
            }
            for c in k..n {
                a[(i, c)] = a[(i, c)] - m * a[(k, c)];
            }
            b[i] = b[i] - m * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s = s - a[(k, c)] * b[c];
        }
        b[k] = s / a[(k, k)];
    }
    b.iter().all(|v| v.is_finite()).then_some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, seed: f64) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |i, j| ((i * 7 + j * 3) as f64 * seed).sin())
    }

    #[test]
    fn kron_identity_products_match_dense_kron() {
        let a = sample(4, 3, 0.37);
        let p = 2;
        let eye = Matrix::identity(p);
        let dense = kron(&a, &eye);
        let v: Vec<f64> = (0..6).map(|k| (k as f64 * 0.9).cos()).collect();
        let w: Vec<f64> = (0..8).map(|k| (k as f64 * 0.4).sin()).collect();
        let fast = kron_identity_mul(&a, p, &v);
        for (x, y) in fast.iter().zip(dense.mul_vec(&v)) {
            assert!((x - y).abs() < 1e-15);
        }
        let fast_t = kron_identity_tr_mul(&a, p, &w);
        for (x, y) in fast_t.iter().zip(dense.tr_mul_vec(&w)) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_and_transpose() {
        let a = sample(3, 4, 0.2);
        let b = sample(4, 2, 0.5);
        let ab = a.matmul(&b);
        let bt_at = b.transpose().matmul(&a.transpose());
        assert!(ab.transpose().max_abs_diff(&bt_at) < 1e-14);
        assert_eq!(Matrix::<f64>::identity(3).matmul(&a), a);
    }

    #[test]
    fn dense_solve_needs_pivoting() {
        let a = Matrix::from_row_major(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 4.0, -1.0, 3.0]);
        let x = vec![0.5, -1.25, 2.0];
        let b = a.mul_vec(&x);
        let got = solve_dense(a, b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!(f64::abs(g - e) < 1e-14);
        }
        let singular = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(solve_dense(singular, vec![1.0, 1.0]).is_none());
    }
}
