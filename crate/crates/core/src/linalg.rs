//! Small dense row-major matrices and a Cholesky factorization.
//!
//! Only what the Levenberg-Marquardt solvers need: symmetric positive
//! definite solves, inverses and traces of inverses.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != T::zero() {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ · self`, exploiting symmetry of the result.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for (i, &ri) in row.iter().enumerate() {
                if ri == T::zero() {
                    continue;
                }
                axpy(ri, &row[i..], &mut g.data[i * n + i..(i + 1) * n]);
            }
        }
        g.fill_lower_from_upper();
        g
    }

    pub fn add_diagonal(&mut self, v: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += v;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub(crate) fn fill_lower_from_upper(&mut self) {
        for i in 0..self.rows {
            for j in 0..i {
                self.data[i * self.cols + j] = self.data[j * self.cols + i];
            }
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular factor `L` with `A = L·Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factorizes a symmetric positive definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Dimension {
                expected: a.rows,
                got: a.cols,
            });
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            let (done, rest) = l.data.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + n];
                let s = a[(i, j)] - dot(&row_i[..j], &row_j[..j]);
                row_i[j] = s / row_j[j];
            }
            let d = a[(i, i)] - dot(&row_i[..i], &row_i[..i]);
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            row_i[i] = d.sqrt();
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length mismatch");
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = l.row(i);
            y[i] = (y[i] - dot(&row[..i], &y[..i])) / row[i];
        }
        for i in (0..n).rev() {
            let row = l.row(i);
            y[i] /= row[i];
            let xi = y[i];
            axpy(-xi, &row[..i], &mut y[..i]);
        }
        y
    }

    /// `L⁻¹`, built row by row.
    pub fn factor_inverse(&self) -> Matrix<T> {
        let n = self.dim();
        let l = &self.l;
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            let (done, rest) = inv.data.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            let li = l.row(i);
            for k in 0..i {
                if li[k] != T::zero() {
                    axpy(-li[k], &done[k * n..k * n + k + 1], &mut row_i[..k + 1]);
                }
            }
            let d = li[i];
            row_i[..i].iter_mut().for_each(|v| *v /= d);
            row_i[i] = T::one() / d;
        }
        inv
    }

    /// `A⁻¹ = L⁻ᵀ·L⁻¹`
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        let li = self.factor_inverse();
        let mut inv = Matrix::zeros(n, n);
        for k in 0..n {
            let row = &li.row(k)[..k + 1];
            for (i, &v) in row.iter().enumerate() {
                axpy(v, &row[i..], &mut inv.data[i * n + i..i * n + k + 1]);
            }
        }
        inv.fill_lower_from_upper();
        inv
    }

    /// `trace(A⁻¹)`, computed as the squared Frobenius norm of `L⁻¹`.
    pub fn trace_inverse(&self) -> T {
        let n = self.dim();
        let l = &self.l;
        let mut total = T::zero();
        let mut x = vec![T::zero(); n];
        for j in 0..n {
            // column j of L⁻¹ is zero above row j
            for i in j..n {
                let row = l.row(i);
                let rhs = if i == j { T::one() } else { T::zero() };
                x[i] = (rhs - dot(&row[j..i], &x[j..i])) / row[i];
                total += x[i] * x[i];
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Matrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_vec(
            n + 3,
            n,
            (0..(n + 3) * n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let mut g = a.gram();
        g.add_diagonal(0.1);
        g
    }

    #[test]
    fn gram_matches_transpose_product() {
        let a = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.gram(), a.transpose().matmul(&a));
    }

    #[test]
    fn cholesky_solve_and_inverse() {
        let a = spd(12, 3);
        let ch = Cholesky::new(&a).unwrap();
        let b: Vec<f64> = (0..12).map(|i| i as f64 - 4.0).collect();
        let x = ch.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        let inv = ch.inverse();
        let eye = a.matmul(&inv);
        for i in 0..12 {
            for j in 0..12 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - want).abs() < 1e-9);
            }
        }
        assert!((ch.trace_inverse() - inv.trace()).abs() < 1e-9);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite)));
    }
}
