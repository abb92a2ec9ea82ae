//! Small dense helpers on top of nalgebra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Real Schur form `M = Q T Q^T`.
///
/// nalgebra's default convergence threshold can stall on nonnormal
/// matrices, so progressively looser thresholds are tried.
pub fn real_schur(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let iters = 200 * n + 1000;
    for eps in [1e-14, 1e-13, 1e-12, 1e-11] {
        if let Some(s) = m.clone().try_schur(eps, iters) {
            let (q, mut t) = s.unpack();
            clean_quasi_triangular(&mut t);
            return Ok((q, t));
        }
    }
    Err(Error::Schur)
}

/// Zeroes everything below the first subdiagonal and splits 2x2 blocks that
/// are numerically decoupled.
fn clean_quasi_triangular(t: &mut DMatrix<f64>) {
    let n = t.nrows();
    for c in 0..n {
        for r in c + 2..n {
            t[(r, c)] = 0.0;
        }
    }
    for i in 0..n.saturating_sub(1) {
        let s = t[(i + 1, i)];
        if s != 0.0 {
            let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if s.abs() <= f64::EPSILON * scale {
                t[(i + 1, i)] = 0.0;
            }
        }
    }
    // two consecutive nonzero subdiagonals cannot both be block couplings
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)] != 0.0 {
            if i + 2 < n {
                t[(i + 2, i + 1)] = 0.0;
            }
            i += 2;
        } else {
            i += 1;
        }
    }
}

/// Diagonal blocks of a quasi-triangular matrix as `(start, size)`.
pub fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Eigenvalues `(re, im)` read off a quasi-triangular matrix.
pub fn quasi_triangular_eigenvalues(t: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(t.nrows());
    for (i, s) in schur_blocks(t) {
        if s == 1 {
            out.push((t[(i, i)], 0.0));
        } else {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let r = libm::sqrt(disc);
                out.push((tr + r, 0.0));
                out.push((tr - r, 0.0));
            } else {
                let r = libm::sqrt(-disc);
                out.push((tr, r));
                out.push((tr, -r));
            }
        }
    }
    out
}

/// All eigenvalues sorted by descending real part (ties: descending imaginary part).
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let (_, t) = real_schur(m)?;
    let mut ev = quasi_triangular_eigenvalues(&t);
    sort_desc(&mut ev);
    Ok(ev)
}

pub fn sort_desc(ev: &mut [(f64, f64)]) {
    ev.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
}

pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.first().map(|e| e.0).unwrap_or(f64::NEG_INFINITY))
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Unit vector spanning the (numerical) null space of `m`, from the right
/// singular vector of its smallest singular value.
pub fn null_vector(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = m.ncols();
    let svd = m.clone().try_svd(false, true, 1e-15, 100 * n + 200)?;
    let vt = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(vt.row(idx).transpose())
}
