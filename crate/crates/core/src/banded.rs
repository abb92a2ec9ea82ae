//! Banded LU with partial pivoting.
//!
//! Grid operators have bandwidth `nx1`, so a banded factorization costs
//! `O(k * nx1^2)` and is far cheaper than dense LU for the grids we use.
//! Multipliers are kept unpermuted (as in LAPACK's `gbtrf`) and row swaps are
//! replayed during the solves.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factors `M - shift * I`.
    pub fn factor(m: &CsrMatrix, shift: f64) -> Result<Self> {
        Self::factor_with_rows(m, shift, &[])
    }

    /// Factors `M - shift * I` after replacing each listed row by the
    /// corresponding unit row. Used to pin values in singular systems.
    pub fn factor_with_rows(m: &CsrMatrix, shift: f64, unit_rows: &[usize]) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let n = m.nrows();
        let (kl, ku) = m.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu { n, kl, ku, width, ab: vec![0.0; n * width], piv: vec![0; n] };
        for (r, c, v) in m.triplets() {
            if !unit_rows.contains(&r) {
                *lu.at_mut(r, c) += v;
            }
        }
        for r in 0..n {
            if unit_rows.contains(&r) {
                *lu.at_mut(r, r) = 1.0;
            } else {
                *lu.at_mut(r, r) -= shift;
            }
        }
        lu.eliminate()?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.kl + self.ku);
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.ab[self.offset(r, c)]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let o = self.offset(r, c);
        &mut self.ab[o]
    }

    fn eliminate(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.ab.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-3;
        for j in 0..n {
            let last = (j + self.kl).min(n - 1);
            let mut p = j;
            let mut best = self.at(j, j).abs();
            for i in j + 1..=last {
                let v = self.at(i, j).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::Singular("banded LU".to_string()));
            }
            self.piv[j] = p;
            let cmax = (j + self.kl + self.ku).min(n - 1);
            if p != j {
                for c in j..=cmax {
                    let a = self.offset(j, c);
                    let b = self.offset(p, c);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.at(j, j);
            for i in j + 1..=last {
                let l = self.at(i, j) / pivot;
                *self.at_mut(i, j) = l;
                if l != 0.0 {
                    let (rj, ri) = (j * self.width, i * self.width);
                    // row j column c sits at rj + c + kl - j; row i at ri + c + kl - i
                    for c in j + 1..=cmax {
                        let u = self.ab[rj + c + self.kl - j];
                        self.ab[ri + c + self.kl - i] -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                for i in j + 1..=(j + self.kl).min(n - 1) {
                    b[i] -= self.at(i, j) * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let cmax = (j + self.kl + self.ku).min(n - 1);
            let mut s = b[j];
            for c in j + 1..=cmax {
                s -= self.at(j, c) * b[c];
            }
            b[j] = s / self.at(j, j);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves with the transpose of the factored matrix.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        // U^T z = b
        for j in 0..n {
            let cmin = j.saturating_sub(self.kl + self.ku);
            let mut s = b[j];
            for r in cmin..j {
                s -= self.at(r, j) * b[r];
            }
            b[j] = s / self.at(j, j);
        }
        // replay L and the swaps backwards
        for j in (0..n).rev() {
            let mut s = b[j];
            for i in j + 1..=(j + self.kl).min(n - 1) {
                s -= self.at(i, j) * b[i];
            }
            b[j] = s;
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}
