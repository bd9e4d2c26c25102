//! Minimal dense square matrices for small type counts `K`.
//!
//! The dimensions involved are tiny (K up to about 16), so a row-major
//! `Vec` with naive products is both the simplest and the fastest choice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Field;

/// Dense row-major `K x K` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "Vec<Vec<T>>",
    into = "Vec<Vec<T>>",
    bound(serialize = "T: Field + Serialize", deserialize = "T: Field + Deserialize<'de>")
)]
pub struct Matrix<T: Clone> {
    k: usize,
    data: Vec<T>,
}

impl<T: Field> Matrix<T> {
    /// The `k x k` zero matrix.
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            data: vec![T::zero(); k * k],
        }
    }

    /// The `k x k` identity matrix.
    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k);
        for i in 0..k {
            m.data[i * k + i] = T::one();
        }
        m
    }

    /// Builds a matrix from rows; all rows must have length `rows.len()`.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::DomainError("matrix must have at least one row".into()));
        }
        let mut data = Vec::with_capacity(k * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::DomainError(format!(
                    "row {i} has length {} but the matrix is {k}x{k}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self { k, data })
    }

    /// Builds a matrix from a closure `f(i, j)`.
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                data.push(f(i, j));
            }
        }
        Self { k, data }
    }

    /// Dimension `K`.
    pub fn dim(&self) -> usize {
        self.k
    }

    /// Entry `(i, j)`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.k + j]
    }

    /// Mutable entry `(i, j)`.
    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.k + j]
    }

    /// Row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    /// Row sum `|A(i)|`.
    pub fn row_sum(&self, i: usize) -> T {
        crate::scalar::sum(self.row(i))
    }

    /// All row sums, i.e. `A 1`.
    pub fn row_sums(&self) -> Vec<T> {
        (0..self.k).map(|i| self.row_sum(i)).collect()
    }

    /// Rows as nested vectors.
    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.k).map(|i| self.row(i).to_vec()).collect()
    }

    /// Flat row-major storage.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        let k = self.k;
        debug_assert_eq!(k, other.k);
        let mut out = Self::zeros(k);
        for i in 0..k {
            for l in 0..k {
                let a = self.get(i, l).clone();
                if a == T::zero() {
                    continue;
                }
                for j in 0..k {
                    let cell = &mut out.data[i * k + j];
                    *cell = cell.clone() + a.clone() * other.get(l, j).clone();
                }
            }
        }
        out
    }

    /// Row vector times matrix, `x A`.
    pub fn left_mul(&self, x: &[T]) -> Vec<T> {
        let k = self.k;
        debug_assert_eq!(x.len(), k);
        let mut out = vec![T::zero(); k];
        for (i, xi) in x.iter().enumerate() {
            if *xi == T::zero() {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o = o.clone() + xi.clone() * self.get(i, j).clone();
            }
        }
        out
    }

    /// Matrix times column vector, `A x`.
    pub fn right_mul(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.k);
        (0..self.k)
            .map(|i| crate::scalar::dot(self.row(i), x))
            .collect()
    }

    /// Entrywise scaling by `c`.
    pub fn scale(&self, c: &T) -> Self {
        Self {
            k: self.k,
            data: self.data.iter().map(|a| a.clone() * c.clone()).collect(),
        }
    }

    /// Entrywise map into another scalar type.
    pub fn map<U: Field>(&self, f: impl Fn(&T) -> U) -> Matrix<U> {
        Matrix {
            k: self.k,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Field> TryFrom<Vec<Vec<T>>> for Matrix<T> {
    type Error = Error;
    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl<T: Field> From<Matrix<T>> for Vec<Vec<T>> {
    fn from(m: Matrix<T>) -> Self {
        m.to_rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_hand_computation() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(a.mul(&b).to_rows(), vec![vec![2.0, 1.0], vec![4.0, 3.0]]);
        assert_eq!(a.left_mul(&[1.0, 1.0]), vec![4.0, 6.0]);
        assert_eq!(a.right_mul(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(a.row_sums(), vec![3.0, 7.0]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(Matrix::<f64>::from_rows(vec![]).is_err());
    }

    #[test]
    fn serde_round_trip_uses_nested_rows() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        let b: Matrix<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
