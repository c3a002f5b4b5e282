//! Compressed-sparse-row complex matrices.
//!
//! Only what the operator algebra and the Liouvillian need. Explicit zeros
//! are dropped on construction.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![C64::new(1.0, 0.0); n],
        }
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        Self::from_triplets(n, n, diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != C64::new(0.0, 0.0) {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let (r, c) = m.shape();
        Self::from_triplets(
            r,
            c,
            (0..r).flat_map(|i| (0..c).map(move |j| (i, j, m[(i, j)]))),
        )
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        match row.binary_search(&c) {
            Ok(k) => self.values[self.indptr[r] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        if s == C64::new(0.0, 0.0) {
            return Self::zeros(self.nrows, self.ncols);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(other.triplets()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(r, c, v)| (c, r, v.conj())),
        )
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v)))
    }

    /// Element-wise complex conjugate.
    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "inner dimensions differ");
        let mut trip = Vec::new();
        let mut acc = vec![C64::new(0.0, 0.0); other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.ncols];
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let mid = self.indices[k];
                let a = self.values[k];
                for k2 in other.indptr[mid]..other.indptr[mid + 1] {
                    let c = other.indices[k2];
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * other.values[k2];
                }
            }
            for &c in &touched {
                trip.push((r, c, acc[c]));
                acc[c] = C64::new(0.0, 0.0);
                mark[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, trip)
    }

    /// Kronecker product `self ⊗ other`; `self` indexes the slow block.
    pub fn kron(&self, other: &Self) -> Self {
        let (p, q) = (other.nrows, other.ncols);
        let mut trip = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.triplets() {
            for (r2, c2, v2) in other.triplets() {
                trip.push((r1 * p + r2, c1 * q + c2, v1 * v2));
            }
        }
        Self::from_triplets(self.nrows * p, self.ncols * q, trip)
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.mul_vec_acc(x, C64::new(1.0, 0.0), &mut y);
        y
    }

    /// `y += s · A x`.
    pub fn mul_vec_acc(&self, x: &[C64], s: C64, y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yr += s * acc;
        }
    }

    /// Largest element-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other)
            .values
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, c(1.0)), (0, 1, c(2.0)), (1, 0, c(0.0))]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), c(3.0));
    }

    #[test]
    fn matmul_matches_dense() {
        let a = CsrMatrix::from_triplets(3, 2, vec![(0, 0, c(1.0)), (2, 1, C64::new(0.0, 2.0))]);
        let b = CsrMatrix::from_triplets(2, 3, vec![(0, 2, c(4.0)), (1, 0, c(-1.0)), (1, 1, c(0.5))]);
        let dense = a.to_dense() * b.to_dense();
        assert_eq!(a.matmul(&b).to_dense(), dense);
    }

    #[test]
    fn kron_block_layout() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, c(2.0))]);
        let b = CsrMatrix::identity(3);
        let k = a.kron(&b);
        assert_eq!(k.nrows(), 6);
        assert_eq!(k.get(1, 4), c(2.0));
        assert_eq!(k.get(4, 1), c(0.0));
    }
}
