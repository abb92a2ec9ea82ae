//! The shifted reduced Riccati equation
//! `F^T Pi + Pi F - Pi b b^T Pi + M = 0`, `F = Ahat + delta I`,
//! by Newton-Kleinman, plus the lift back to the full node space.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dense::{quasi_triangular_eigenvalues, real_schur, schur_blocks, symmetrize_in_place};
use crate::error::{Error, Result};
use crate::lyapunov::solve_lyapunov;
use crate::projection::{ReducedSystem, ReductionMap};
use crate::sparse::LinOp;

pub const CARE_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 40;
/// Newton stops here; well below [`CARE_TOL`], one step short of the rounding floor.
const NEWTON_STOP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiccatiSolution {
    pub pihat: DMatrix<f64>,
    /// `Pi b`, i.e. the transpose of the gain row `b^T Pi`.
    pub gain: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Relative residual after each Newton step.
    pub history: Vec<f64>,
    /// Eigenvalues of `F` moved by the initial stabilizing gain.
    pub unstable: Vec<f64>,
}

/// Relative Frobenius residual
/// `|F^T Pi + Pi F - Pi b b^T Pi + M| / (|M| + 2 |F| |Pi| + |Pi b|^2)`.
pub fn care_residual_parts(pi: &DMatrix<f64>, f: &DMatrix<f64>, b: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    let pf = pi * f;
    let pb = pi * b;
    let r = pf.transpose() + &pf - &pb * pb.transpose() + m;
    let scale = m.norm() + 2.0 * f.norm() * pi.norm() + pb.norm_squared();
    if scale > 0.0 {
        r.norm() / scale
    } else {
        r.norm()
    }
}

pub fn care_residual(pi: &DMatrix<f64>, sys: &ReducedSystem) -> f64 {
    care_residual_parts(pi, &sys.shifted(), &sys.bhat, &sys.mhat)
}

/// Closed form of the scalar equation `2 (a + delta) p - b^2 p^2 + m = 0`
/// (stabilizing root).
pub fn care_scalar(a: f64, b: f64, m: f64, delta: f64) -> f64 {
    let f = a + delta;
    (f + libm::sqrt(f * f + b * b * m)) / (b * b)
}

type C64 = nalgebra::Complex<f64>;

/// Eigenvector of `T^T` for the eigenvalue `lambda` of the diagonal block
/// starting at `j`, by forward substitution (entries above `j` vanish).
fn left_schur_vector(t: &DMatrix<f64>, j: usize, size: usize, lambda: C64) -> Result<Vec<C64>> {
    let n = t.nrows();
    let zero = C64::new(0.0, 0.0);
    let mut z = vec![zero; n];
    if size == 1 {
        z[j] = C64::new(1.0, 0.0);
    } else {
        // null vector of the 2x2 block transposed minus lambda
        let p = C64::new(t[(j, j)], 0.0) - lambda;
        let q = C64::new(t[(j + 1, j)], 0.0);
        z[j] = q;
        z[j + 1] = -p;
    }
    let scale = t.norm();
    for &(s, bs) in schur_blocks(t).iter().filter(|(s, _)| *s > j) {
        let rhs = |i: usize, z: &[C64]| -> C64 { -(j..s).map(|m| z[m] * t[(m, i)]).sum::<C64>() };
        if bs == 1 {
            let d = C64::new(t[(s, s)], 0.0) - lambda;
            if libm::hypot(d.re, d.im) <= 1e-14 * scale {
                return Err(Error::Singular("repeated unstable eigenvalue".into()));
            }
            z[s] = rhs(s, &z) / d;
        } else {
            // [a b; c d] is the transposed diagonal block minus lambda
            let a = C64::new(t[(s, s)], 0.0) - lambda;
            let b = C64::new(t[(s + 1, s)], 0.0);
            let c = C64::new(t[(s, s + 1)], 0.0);
            let d = C64::new(t[(s + 1, s + 1)], 0.0) - lambda;
            let (r0, r1) = (rhs(s, &z), rhs(s + 1, &z));
            let det = a * d - b * c;
            if libm::hypot(det.re, det.im) <= 1e-14 * scale * scale {
                return Err(Error::Singular("repeated unstable eigenvalue".into()));
            }
            z[s] = (d * r0 - b * r1) / det;
            z[s + 1] = (a * r1 - c * r0) / det;
        }
    }
    Ok(z)
}

/// Gain row `k` (stored as a column) making `F - b k^T` stable. Only the
/// eigenvalues of `F` in the closed right half plane are moved: they are
/// mirrored to the left half plane through a Lyapunov-based gain on their
/// left invariant subspace. Returns the gain and the real parts of the moved
/// eigenvalues.
pub fn initial_gain(f: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = f.nrows();
    let (u, t) = real_schur(f)?;
    let bn = b.norm();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut moved = Vec::new();
    for (s, size) in schur_blocks(&t) {
        let ev = quasi_triangular_eigenvalues(&t.view((s, s), (size, size)).clone_owned());
        let (re, im) = if size == 2 { (ev[0].0, ev[0].1.abs()) } else { (t[(s, s)], 0.0) };
        if re < 0.0 {
            continue;
        }
        let z = left_schur_vector(&t, s, size, C64::new(re, im))?;
        let zr = &u * DVector::from_iterator(n, z.iter().map(|c| c.re));
        let zi = &u * DVector::from_iterator(n, z.iter().map(|c| c.im));
        let norm = libm::sqrt(zr.norm_squared() + zi.norm_squared());
        let proj = libm::hypot(zr.dot(b), zi.dot(b));
        let margin = if bn > 0.0 { proj / (norm * bn) } else { 0.0 };
        if margin < crate::shape::HAUTUS_TOL {
            return Err(Error::Stabilization { eigenvalue: re, margin });
        }
        cols.push(zr);
        moved.push(re);
        if size == 2 {
            cols.push(zi);
            moved.push(re);
        }
    }
    if cols.is_empty() {
        return Ok((DVector::zeros(n), moved));
    }
    let q = DMatrix::from_columns(&cols).qr().q();
    // span(Q) is left invariant: Q^T F = Lam Q^T with Lam antistable
    let lam = q.transpose() * f * &q;
    let bz = q.transpose() * b;
    // Lam Y + Y Lam^T = bz bz^T; then Lam - bz bz^T Y^{-1} = -Y Lam^T Y^{-1}
    let rhs = &bz * bz.transpose();
    let y = solve_lyapunov(&(-lam.transpose()), &rhs)?.x;
    let yinv = y.try_inverse().ok_or_else(|| Error::Singular("stabilization Gramian".into()))?;
    Ok((q * (yinv * bz), moved))
}

/// Newton-Kleinman iteration for `F^T Pi + Pi F - Pi b b^T Pi + M = 0`.
pub fn solve_care_parts(f: &DMatrix<f64>, b: &DVector<f64>, m: &DMatrix<f64>) -> Result<RiccatiSolution> {
    let n = f.nrows();
    if b.len() != n || m.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    let (mut k, unstable) = initial_gain(f, b)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..MAX_NEWTON {
        let fk = f - b * k.transpose();
        let w = m + &k * k.transpose();
        let sol = solve_lyapunov(&fk, &w)?;
        let mut pi = sol.x;
        symmetrize_in_place(&mut pi);
        let res = care_residual_parts(&pi, f, b, m);
        history.push(res);
        k = &pi * b;
        if best.as_ref().map(|(r, _)| res < *r).unwrap_or(true) {
            best = Some((res, pi));
        } else if res < 1e-10 {
            // rounding floor reached
            break;
        }
        if res <= NEWTON_STOP {
            break;
        }
    }
    let (residual, pihat) = best.expect("at least one Newton step");
    if residual > CARE_TOL {
        return Err(Error::NewtonStagnation { history });
    }
    let gain = &pihat * b;
    Ok(RiccatiSolution { pihat, gain, residual, iterations: history.len(), history, unstable })
}

pub fn solve_care(sys: &ReducedSystem) -> Result<RiccatiSolution> {
    solve_care_parts(&sys.shifted(), &sys.bhat, &sys.mhat)
}

/// Stabilizing solution through the matrix sign function of the Hamiltonian
/// `[F, -b b^T; -M, -F^T]`. Cross-check for small problems.
pub fn solve_care_sign(f: &DMatrix<f64>, b: &DVector<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(f);
    z.view_mut((0, n), (n, n)).copy_from(&(-(b * b.transpose())));
    z.view_mut((n, 0), (n, n)).copy_from(&(-m));
    z.view_mut((n, n), (n, n)).copy_from(&(-f.transpose()));
    let mut converged = false;
    for _ in 0..100 {
        let zi = z.clone().try_inverse().ok_or_else(|| Error::Singular("Hamiltonian sign iteration".into()))?;
        let c = libm::sqrt(zi.norm() / z.norm());
        let next = (&z * c + zi / c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { what: "matrix sign function", residual: f64::NAN, iterations: 100 });
    }
    // [W12; W22 + I] X = -[W11 + I; W21]
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z.view((0, 0), (n, n)) + DMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let qr = lhs.qr();
    let qtb = qr.q().transpose() * rhs;
    let mut x = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("sign-function least squares".into()))?;
    symmetrize_in_place(&mut x);
    Ok(x)
}

/// `Pi = R^{-T} [Pihat 0; 0 0] R^{-1}` as a dense `k x k` matrix.
pub fn lift_riccati(pihat: &DMatrix<f64>, map: &ReductionMap) -> DMatrix<f64> {
    let k = map.k();
    let w = map.w();
    let rho = map.rho_inf();
    let free = map.free_nodes();
    let rho_f = DVector::from_iterator(free.len(), free.iter().map(|&f| rho[f]));
    let g = pihat * &rho_f;
    let s = rho_f.dot(&g);
    let mut gext = vec![0.0; k];
    for (i, &f) in free.iter().enumerate() {
        gext[f] = g[i];
    }
    let mut pi = DMatrix::from_fn(k, k, |r, c| w * w * s - w * gext[r] - w * gext[c]);
    for (j, &fj) in free.iter().enumerate() {
        for (i, &fi) in free.iter().enumerate() {
            pi[(fi, fj)] += pihat[(i, j)];
        }
    }
    pi
}

/// `Q^T R^T Pi R Q`, the inverse of [`lift_riccati`] on operators with `Pi rho_inf = 0`.
pub fn reduce_riccati(pi: &DMatrix<f64>, map: &ReductionMap) -> DMatrix<f64> {
    let free = map.free_nodes();
    let a = map.anchor();
    let n = free.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (fi, fj) = (free[i], free[j]);
        pi[(fi, fj)] - pi[(fi, a)] - pi[(a, fj)] + pi[(a, a)]
    })
}

/// Relative residual of the full equation
/// `(A^T + delta P^T) Pi + Pi (A + delta P) - Pi B B^T Pi + P^T M P = 0`
/// with `M = scale * w I` (dense; small grids only).
pub fn full_riccati_residual(
    pi: &DMatrix<f64>,
    a: &LinOp,
    b: &[f64],
    map: &ReductionMap,
    delta: f64,
    weight_scale: f64,
) -> f64 {
    let k = map.k();
    let w = map.w();
    let rho = DVector::from_column_slice(map.rho_inf());
    let ones = DVector::from_element(k, w);
    let p = DMatrix::identity(k, k) - &rho * ones.transpose();
    let f = a.to_dense() + &p * delta;
    let bb = DVector::from_column_slice(b);
    let m = p.transpose() * &p * (weight_scale * w);
    care_residual_parts(pi, &f, &bb, &m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_closed_form() {
        for &(a, b, m, delta) in &[(0.5, 1.0, 1.0, 0.0), (-0.3, 2.0, 0.5, 1.0), (-2.0, 0.7, 3.0, 0.5), (1.0, 1.0, 0.0, 0.0)] {
            let f = DMatrix::from_element(1, 1, a + delta);
            let bv = DVector::from_element(1, b);
            let mm = DMatrix::from_element(1, 1, m);
            let exact = care_scalar(a, b, m, delta);
            let s = solve_care_parts(&f, &bv, &mm).unwrap();
            assert!((s.pihat[(0, 0)] - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{} vs {exact}", s.pihat[(0, 0)]);
            let r = care_residual_parts(&DMatrix::from_element(1, 1, exact), &f, &bv, &mm);
            assert!(r <= 1e-14);
        }
    }

    #[test]
    fn zero_solution_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let m = DMatrix::identity(n, n);
        assert!((care_residual_parts(&DMatrix::zeros(n, n), &f, &b, &m) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn newton_matches_sign_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3usize, 7, 15] {
            let mut f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            for i in 0..n {
                f[(i, i)] -= 0.6;
            }
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let m = &g * g.transpose() + DMatrix::identity(n, n);
            let s = solve_care_parts(&f, &b, &m).unwrap();
            assert!(s.residual < 1e-12);
            let x = solve_care_sign(&f, &b, &m).unwrap();
            assert!((&x - &s.pihat).norm() < 1e-8 * x.norm(), "n={n}");
            let cl = &f - &b * s.gain.transpose();
            assert!(crate::dense::spectral_abscissa(&cl).unwrap() < 0.0);
            let e = nalgebra::SymmetricEigen::new(s.pihat.clone());
            assert!(e.eigenvalues.iter().all(|&v| v > -1e-10));
        }
    }

    #[test]
    fn residual_grows_linearly() {
        let f = DMatrix::from_row_slice(2, 2, &[0.4, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.5]);
        let m = DMatrix::identity(2, 2);
        let s = solve_care_parts(&f, &b, &m).unwrap();
        let r = |eps: f64| care_residual_parts(&(&s.pihat + DMatrix::identity(2, 2) * eps), &f, &b, &m);
        let (r1, r2) = (r(1e-6), r(2e-6));
        assert!((r2 / r1 - 2.0).abs() < 0.01);
    }

    #[test]
    fn uncontrollable_unstable_mode_is_named() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, -1.0]));
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let m = DMatrix::identity(2, 2);
        match solve_care_parts(&f, &b, &m) {
            Err(Error::Stabilization { eigenvalue, .. }) => assert!((eigenvalue - 0.7).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }
}
