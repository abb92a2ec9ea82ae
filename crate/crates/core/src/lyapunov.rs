//! Dense Lyapunov equations `F^T X + X F + W = 0` by Bartels-Stewart.

use nalgebra::DMatrix;

use crate::dense::{quasi_triangular_eigenvalues, real_schur, schur_blocks, symmetrize_in_place};
use crate::error::{Error, Result};

/// Largest dimension for which the Kronecker-vectorized oracle is allowed.
pub const VECTORIZED_MAX: usize = 30;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LyapunovSolution {
    pub x: DMatrix<f64>,
    pub residual: f64,
}

/// `|F^T X + X F + W|_F / (2 |F|_F |X|_F + |W|_F)`.
pub fn lyap_residual(x: &DMatrix<f64>, f: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let xf = x * f;
    let r = xf.transpose() + &xf + w;
    let scale = 2.0 * f.norm() * x.norm() + w.norm();
    if scale > 0.0 {
        r.norm() / scale
    } else {
        r.norm()
    }
}

/// Solves the (at most 4x4) system `A^T z + z B = r` for tiny `A`, `B`.
fn small_sylvester(a: &[[f64; 2]; 2], p: usize, b: &[[f64; 2]; 2], q: usize, r: &mut [f64; 4]) -> Result<()> {
    if p == 1 && q == 1 {
        let d = a[0][0] + b[0][0];
        if d == 0.0 {
            return Err(Error::Singular("Lyapunov block".into()));
        }
        r[0] /= d;
        return Ok(());
    }
    let n = p * q;
    let mut m = [[0.0f64; 4]; 4];
    for j in 0..q {
        for i in 0..p {
            let row = i + p * j;
            for mm in 0..p {
                m[row][mm + p * j] += a[mm][i];
            }
            for mm in 0..q {
                m[row][i + p * mm] += b[mm][j];
            }
        }
    }
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        if m[piv][c].abs() <= f64::EPSILON * scale * 1e-2 {
            return Err(Error::Singular("Lyapunov block".into()));
        }
        m.swap(c, piv);
        r.swap(c, piv);
        for rr in c + 1..n {
            let l = m[rr][c] / m[c][c];
            if l != 0.0 {
                for cc in c..n {
                    m[rr][cc] -= l * m[c][cc];
                }
                r[rr] -= l * r[c];
            }
        }
    }
    for c in (0..n).rev() {
        let mut s = r[c];
        for cc in c + 1..n {
            s -= m[c][cc] * r[cc];
        }
        r[c] = s / m[c][c];
    }
    Ok(())
}

fn block(t: &DMatrix<f64>, s: usize, size: usize) -> [[f64; 2]; 2] {
    let mut b = [[0.0; 2]; 2];
    for i in 0..size {
        for j in 0..size {
            b[i][j] = t[(s + i, s + j)];
        }
    }
    b
}

/// Solves `T^T Y + Y T = C` for quasi-upper-triangular `T`, one column block at
/// a time with forward substitution down the rows.
pub fn solve_quasi_triangular(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let blocks = schur_blocks(t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(l0, lq) in &blocks {
        let mut r = c.columns(l0, lq).clone_owned();
        if l0 > 0 {
            r.gemm(-1.0, &y.columns(0, l0), &t.view((0, l0), (l0, lq)), 1.0);
        }
        let tll = block(t, l0, lq);
        for &(k0, kp) in &blocks {
            let mut rk = [0.0; 4];
            for j in 0..lq {
                for i in 0..kp {
                    let mut s = r[(k0 + i, j)];
                    if k0 > 0 {
                        s -= t.view((0, k0 + i), (k0, 1)).dot(&y.view((0, l0 + j), (k0, 1)));
                    }
                    rk[i + kp * j] = s;
                }
            }
            small_sylvester(&block(t, k0, kp), kp, &tll, lq, &mut rk)?;
            for j in 0..lq {
                for i in 0..kp {
                    y[(k0 + i, l0 + j)] = rk[i + kp * j];
                }
            }
        }
    }
    Ok(y)
}

/// Bartels-Stewart solve of `F^T X + X F + W = 0` for stable `F` and symmetric `W`.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<LyapunovSolution> {
    let n = f.nrows();
    if f.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: w.nrows() });
    }
    let (u, t) = real_schur(f)?;
    let abscissa = quasi_triangular_eigenvalues(&t).iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(Error::NotStable { abscissa });
    }
    let c = -(u.transpose() * w * &u);
    let y = solve_quasi_triangular(&t, &c)?;
    let mut x = &u * y * u.transpose();
    symmetrize_in_place(&mut x);
    let residual = lyap_residual(&x, f, w);
    Ok(LyapunovSolution { x, residual })
}

/// Direct solve of `(I (x) F^T + F^T (x) I) vec(X) = -vec(W)`; oracle for small `n`.
pub fn solve_lyapunov_vectorized(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if n > VECTORIZED_MAX {
        return Err(Error::InvalidInput(alloc::format!(
            "vectorized solve limited to n <= {VECTORIZED_MAX}, got {n}"
        )));
    }
    let nn = n * n;
    let mut m = DMatrix::<f64>::zeros(nn, nn);
    // column-major vec: X[(i, j)] -> i + n j
    for j in 0..n {
        for i in 0..n {
            let row = i + n * j;
            for k in 0..n {
                m[(row, k + n * j)] += f[(k, i)]; // (F^T X)_{ij}
                m[(row, i + n * k)] += f[(k, j)]; // (X F)_{ij}
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(nn, w.iter().map(|v| -v));
    let sol = m.lu().solve(&rhs).ok_or_else(|| Error::Singular("vectorized Lyapunov".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}
