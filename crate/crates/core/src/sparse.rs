//! Compressed sparse row storage and grid-bound operators.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// What an operator represents. Functions that need a specific kind check it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OpTag {
    /// Forward (density) generator `A`.
    Generator,
    /// Backward generator `A*`.
    AdjointGenerator,
    /// Control operator `N`.
    Control,
    Elliptic,
    Gram,
    /// Similarity-transformed generator, symmetric in the Euclidean sense.
    Symmetrized,
}

pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.entries.push((r, c, v));
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl From<TripletBuilder> for CsrMatrix {
    /// Duplicates are summed; columns are sorted within each row.
    fn from(mut tb: TripletBuilder) -> Self {
        tb.entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; tb.nrows + 1];
        let mut indices = Vec::with_capacity(tb.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(tb.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &tb.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..tb.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix { nrows: tb.nrows, ncols: tb.ncols, indptr, indices, data }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = A^T x` without forming the transpose.
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut tb = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (r, c, v) in self.triplets() {
            tb.push(c, r, v);
        }
        tb.into()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.ncols];
        for (_, c, v) in self.triplets() {
            s[c] += v;
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    /// Largest `|r - c|` over stored entries, split into lower and upper parts.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for (r, c, _) in self.triplets() {
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        (kl, ku)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    /// `self * diag(d)`.
    pub fn scale_columns(&self, d: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for (k, v) in out.data.iter_mut().enumerate() {
            *v *= d[self.indices[k]];
        }
        out
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for (r, &dr) in d.iter().enumerate().take(self.nrows) {
            for v in &mut out.data[self.indptr[r]..self.indptr[r + 1]] {
                *v *= dr;
            }
        }
        out
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> CsrMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A sparse operator on the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinOp {
    grid: Grid2D,
    tag: OpTag,
    mat: CsrMatrix,
}

impl LinOp {
    pub fn new(grid: Grid2D, tag: OpTag, mat: CsrMatrix) -> Self {
        debug_assert_eq!(mat.nrows(), grid.k());
        debug_assert_eq!(mat.ncols(), grid.k());
        Self { grid, tag, mat }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn tag(&self) -> OpTag {
        self.tag
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn expect_tag(&self, tag: OpTag) -> Result<()> {
        if self.tag == tag {
            Ok(())
        } else {
            Err(Error::WrongTag { expected: tag, found: self.tag })
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mat.mul_vec(x)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.mat.mul_vec_into(x, y)
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.mat.mul_transpose_vec(x)
    }

    pub fn transpose_as(&self, tag: OpTag) -> LinOp {
        LinOp { grid: self.grid, tag, mat: self.mat.transpose() }
    }

    pub fn with_tag(self, tag: OpTag) -> LinOp {
        LinOp { tag, ..self }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.frobenius_norm()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.mat.to_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut tb = TripletBuilder::new(2, 3);
        tb.push(1, 2, 1.0);
        tb.push(0, 1, 2.0);
        tb.push(1, 2, 0.5);
        tb.push(1, 0, -1.0);
        let m = CsrMatrix::from(tb);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.row(1).0, &[0, 2]);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![4.0, 3.5]);
        assert_eq!(m.mul_transpose_vec(&[1.0, 1.0]), vec![-1.0, 2.0, 1.5]);
        assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
        assert_eq!(m.bandwidths(), (1, 1));
    }

    #[test]
    fn scaling() {
        let mut tb = TripletBuilder::new(2, 2);
        tb.push(0, 0, 1.0);
        tb.push(0, 1, 2.0);
        tb.push(1, 0, 3.0);
        let m = CsrMatrix::from(tb);
        let d = [2.0, 10.0];
        let rs = m.scale_rows(&d).to_dense();
        let cs = m.scale_columns(&d).to_dense();
        let md = m.to_dense();
        let dd = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d));
        assert_eq!(rs, &dd * &md);
        assert_eq!(cs, &md * &dd);
    }

    #[test]
    fn empty_rows() {
        let tb = TripletBuilder::new(3, 3);
        let m = CsrMatrix::from(tb);
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![0.0; 3]);
    }
}
