//! Leading eigenpairs of the generator, the symmetrized operator, and the
//! choice of the shift `delta` and the Lyapunov parameter `mu`.
//!
//! Eigenvalues come from a dense real Schur decomposition on small grids and
//! from shift-invert block subspace iteration near the origin otherwise.
//! Eigenvectors of `A` and `A^T` are then obtained cluster by cluster with
//! block inverse iteration on a banded factorization.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::BandedLu;
use crate::dense;
use crate::error::{Error, Result};
use crate::grid::{dot, Grid2D, ScalarField};
use crate::operators::norm;
use crate::sparse::{LinOp, OpTag};

/// Largest node count handled by the dense eigensolver.
pub const DENSE_MAX: usize = 400;
/// Largest number of leading pairs we compute.
pub const MAX_PAIRS: usize = 12;
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SpectralMethod {
    Dense,
    ShiftInvert,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Eigenpair {
    pub re: f64,
    pub im: f64,
    /// Right eigenvector of `A`, unit weighted norm. `None` for complex pairs.
    pub psi: Option<Vec<f64>>,
    /// Eigenvector of `A^T`, unit weighted norm. `None` for complex pairs.
    pub phi: Option<Vec<f64>>,
    /// `|A psi - lambda psi| / (|A|_F |psi|)`.
    pub residual_right: f64,
    /// `|A^T phi - lambda phi| / (|A|_F |phi|)`.
    pub residual_left: f64,
}

impl Eigenpair {
    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }
}

/// Leading eigenpairs sorted by descending real part; index 1 is the zero
/// eigenvalue.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectralData {
    pub grid: Grid2D,
    pub pairs: Vec<Eigenpair>,
    pub method: SpectralMethod,
}

impl SpectralData {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `lambda_i`, 1-based.
    pub fn lambda(&self, i: usize) -> f64 {
        self.pairs[i - 1].re
    }

    pub fn pair(&self, i: usize) -> &Eigenpair {
        &self.pairs[i - 1]
    }

    pub fn psi(&self, i: usize) -> Result<ScalarField> {
        self.field(i, |p| p.psi.as_ref())
    }

    pub fn phi(&self, i: usize) -> Result<ScalarField> {
        self.field(i, |p| p.phi.as_ref())
    }

    fn field(&self, i: usize, get: impl Fn(&Eigenpair) -> Option<&Vec<f64>>) -> Result<ScalarField> {
        let p = self
            .pairs
            .get(i.wrapping_sub(1))
            .ok_or_else(|| Error::MissingEigenvectors(alloc::format!("index {i} not computed")))?;
        let v = get(p).ok_or_else(|| {
            Error::MissingEigenvectors(alloc::format!("eigenvalue {i} is complex ({} ± {}i)", p.re, p.im))
        })?;
        ScalarField::new(self.grid, v.clone())
    }

    pub fn max_residual(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.residual_left.max(p.residual_right))
            .fold(0.0, f64::max)
    }
}

/// `S = D A D^{-1}` with `D = diag(exp(phi / 2))`, and its relative symmetry
/// defect `|S - S^T|_F / |S|_F`.
pub fn symmetrize(a: &LinOp, phi: &ScalarField) -> Result<(LinOp, f64)> {
    a.expect_tag(OpTag::Generator)?;
    if a.grid() != phi.grid() {
        return Err(Error::GridMismatch);
    }
    let f = phi.values();
    let mut tb = crate::sparse::TripletBuilder::with_capacity(a.dim(), a.dim(), a.matrix().nnz());
    for (r, c, v) in a.matrix().triplets() {
        tb.push(r, c, v * libm::exp(0.5 * (f[r] - f[c])));
    }
    let s = LinOp::new(*a.grid(), OpTag::Symmetrized, tb.into());
    let m = s.matrix();
    let mut diff = crate::sparse::TripletBuilder::with_capacity(a.dim(), a.dim(), 2 * m.nnz());
    for (r, c, v) in m.triplets() {
        diff.push(r, c, v);
        diff.push(c, r, -v);
    }
    let d2 = crate::sparse::CsrMatrix::from(diff).frobenius_norm();
    let defect = d2 / m.frobenius_norm();
    Ok((s, defect))
}

fn weighted_normalize(v: &mut [f64], w: f64) {
    let n = libm::sqrt(w * dot(v, v));
    let peak = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let sign = v
        .iter()
        .find(|x| x.abs() > 1e-6 * peak)
        .map(|x| if *x < 0.0 { -1.0 } else { 1.0 })
        .unwrap_or(1.0);
    v.iter_mut().for_each(|x| *x *= sign / n);
}

/// Orthonormal basis of the columns (Euclidean), via thin QR.
fn orthonormalize(v: DMatrix<f64>) -> DMatrix<f64> {
    let qr = v.qr();
    qr.q()
}

fn random_block(k: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(k, p, |_, _| rng.gen_range(-1.0..1.0))
}

fn apply_cols(a: &LinOp, v: &DMatrix<f64>, transpose: bool) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for j in 0..v.ncols() {
        let col: Vec<f64> = v.column(j).iter().cloned().collect();
        let y = if transpose { a.apply_transpose(&col) } else { a.apply(&col) };
        out.column_mut(j).copy_from_slice(&y);
    }
    out
}

fn solve_cols(lu: &BandedLu, v: &DMatrix<f64>, transpose: bool) -> DMatrix<f64> {
    let mut out = v.clone();
    for j in 0..v.ncols() {
        let mut col: Vec<f64> = v.column(j).iter().cloned().collect();
        if transpose {
            lu.solve_transpose_in_place(&mut col);
        } else {
            lu.solve_in_place(&mut col);
        }
        out.column_mut(j).copy_from_slice(&col);
    }
    out
}

/// Leading `count` eigenvalues by shift-invert subspace iteration around a
/// small positive shift.
fn shift_invert_eigenvalues(a: &LinOp, count: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let k = a.dim();
    let p = (count + 10).min(k);
    let scale = a.frobenius_norm() / libm::sqrt(k as f64);
    let sigma = 1e-3 * scale;
    let lu = BandedLu::factor(a.matrix(), sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = orthonormalize(random_block(k, p, &mut rng));
    let mut prev: Vec<(f64, f64)> = Vec::new();
    let max_iter = 400;
    for it in 0..max_iter {
        v = orthonormalize(solve_cols(&lu, &v, false));
        if it % 3 != 2 {
            continue;
        }
        let av = apply_cols(a, &v, false);
        let h = v.transpose() * &av;
        let mut ev = dense::eigenvalues(&h)?;
        ev.truncate(count);
        let converged = prev.len() == ev.len()
            && ev.iter().zip(&prev).all(|(x, y)| {
                let s = 1.0 + libm::hypot(x.0, x.1);
                libm::hypot(x.0 - y.0, x.1 - y.1) <= 1e-12 * s
            });
        if converged {
            return Ok(ev);
        }
        prev = ev;
    }
    Err(Error::NotConverged { what: "shift-invert subspace iteration", residual: f64::NAN, iterations: max_iter })
}

/// Group sorted eigenvalues into clusters of (numerically) equal values.
fn clusters(ev: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut s = 0;
    for i in 1..=ev.len() {
        let split = i == ev.len() || {
            let (a, b) = (ev[i - 1], ev[i]);
            libm::hypot(a.0 - b.0, a.1 - b.1) > 1e-6 * (1.0 + libm::hypot(a.0, a.1))
        };
        if split {
            out.push((s, i - s));
            s = i;
        }
    }
    out
}

/// Vectors spanning the invariant subspace for a cluster of real eigenvalues
/// near `lambda`, followed by Rayleigh-Ritz inside the block.
fn cluster_vectors(
    a: &LinOp,
    lambda: f64,
    size: usize,
    transpose: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let k = a.dim();
    let offset = 1e-7 * (1.0 + lambda.abs());
    let lu = BandedLu::factor(a.matrix(), lambda + offset)?;
    let mut v = orthonormalize(random_block(k, size, rng));
    for _ in 0..4 {
        v = orthonormalize(solve_cols(&lu, &v, transpose));
    }
    let av = apply_cols(a, &v, transpose);
    let h = v.transpose() * &av;
    if size == 1 {
        return Ok(vec![(h[(0, 0)], v.column(0).iter().cloned().collect())]);
    }
    let mut out = Vec::with_capacity(size);
    let mut ev = dense::eigenvalues(&h)?;
    ev.retain(|e| e.1 == 0.0);
    let spread = ev.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)
        - ev.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    if ev.len() < size || spread <= 1e-10 * (1.0 + lambda.abs()) {
        // (numerically) multiple eigenvalue: every basis vector is an eigenvector
        for j in 0..size {
            out.push((h[(j, j)], v.column(j).iter().cloned().collect()));
        }
        return Ok(out);
    }
    for (theta, _) in ev {
        let mut m = h.clone();
        for i in 0..size {
            m[(i, i)] -= theta;
        }
        let y = dense::null_vector(&m).ok_or(Error::NotConverged {
            what: "cluster Rayleigh-Ritz",
            residual: f64::NAN,
            iterations: 0,
        })?;
        out.push((theta, (&v * y).iter().cloned().collect()));
    }
    Ok(out)
}

fn rel_residual(a: &LinOp, v: &[f64], lambda: f64, transpose: bool) -> f64 {
    let av = if transpose { a.apply_transpose(v) } else { a.apply(v) };
    let r: Vec<f64> = av.iter().zip(v).map(|(x, y)| x - lambda * y).collect();
    norm(&r) / (a.frobenius_norm() * norm(v))
}

/// The `count` eigenvalues of the generator with largest real part, with
/// eigenvectors of `A` (`psi`) and `A^T` (`phi`).
pub fn leading_eigenpairs(a: &LinOp, count: usize) -> Result<SpectralData> {
    a.expect_tag(OpTag::Generator)?;
    if count == 0 || count > MAX_PAIRS {
        return Err(Error::InvalidInput(alloc::format!("pair count must be in 1..={MAX_PAIRS}, got {count}")));
    }
    let k = a.dim();
    let grid = *a.grid();
    let w = grid.w();
    let count = count.min(k);
    // compute a little beyond the window so clusters are not cut in half
    let want = (count + 2).min(k);
    let (mut ev, method) = if k <= DENSE_MAX {
        let mut ev = dense::eigenvalues(&a.to_dense())?;
        ev.truncate(want);
        (ev, SpectralMethod::Dense)
    } else {
        (shift_invert_eigenvalues(a, want, 0x5eed)?, SpectralMethod::ShiftInvert)
    };
    // the zero eigenvalue is known exactly
    if let Some(first) = ev.first_mut() {
        if first.0.abs() <= 1e-8 * a.frobenius_norm() / libm::sqrt(k as f64) && first.1 == 0.0 {
            *first = (0.0, 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xf00d);
    let mut pairs: Vec<Eigenpair> = Vec::with_capacity(want);
    for (start, size) in clusters(&ev) {
        if start >= count {
            break;
        }
        let (re, im) = ev[start];
        if im.abs() > 1e-10 * (1.0 + re.abs()) {
            for &(re, im) in &ev[start..start + size] {
                pairs.push(Eigenpair {
                    re,
                    im,
                    psi: None,
                    phi: None,
                    residual_right: f64::NAN,
                    residual_left: f64::NAN,
                });
            }
            continue;
        }
        if start == 0 && re == 0.0 && size == 1 {
            let mut phi = vec![1.0; k];
            weighted_normalize(&mut phi, w);
            let mut psi = crate::operators::discrete_stationary(a)?.into_values();
            weighted_normalize(&mut psi, w);
            pairs.push(Eigenpair {
                re: 0.0,
                im: 0.0,
                residual_right: rel_residual(a, &psi, 0.0, false),
                residual_left: rel_residual(a, &phi, 0.0, true),
                psi: Some(psi),
                phi: Some(phi),
            });
            continue;
        }
        let mut right = cluster_vectors(a, re, size, false, &mut rng)?;
        let mut left = cluster_vectors(a, re, size, true, &mut rng)?;
        right.sort_by(|x, y| y.0.total_cmp(&x.0));
        left.sort_by(|x, y| y.0.total_cmp(&x.0));
        for ((lr, mut psi), (_, mut phi)) in right.into_iter().zip(left) {
            weighted_normalize(&mut psi, w);
            weighted_normalize(&mut phi, w);
            let lambda = if size == 1 { re } else { lr };
            pairs.push(Eigenpair {
                re: lambda,
                im: 0.0,
                residual_right: rel_residual(a, &psi, lambda, false),
                residual_left: rel_residual(a, &phi, lambda, true),
                psi: Some(psi),
                phi: Some(phi),
            });
        }
    }
    pairs.truncate(count);
    for (i, p) in pairs.iter().enumerate() {
        if p.is_real() {
            let r = p.residual_left.max(p.residual_right);
            if !(r <= RESIDUAL_TOL) {
                return Err(Error::NotConverged { what: "eigenpair", residual: r, iterations: i + 1 });
            }
        }
    }
    Ok(SpectralData { grid, pairs, method })
}

/// `delta = (|Re lambda_d| + |Re lambda_{d+1}|) / 2`.
pub fn choose_delta(spec: &SpectralData, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidInput(alloc::format!("d must be at least 2, got {d}")));
    }
    if spec.len() < d + 1 {
        return Err(Error::InvalidInput(alloc::format!(
            "need {} eigenvalues to place the shift, have {}",
            d + 1,
            spec.len()
        )));
    }
    let (ld, ln) = (spec.lambda(d), spec.lambda(d + 1));
    let gap = ld - ln;
    if !(gap >= 1e-8) {
        return Err(Error::NoSpectralGap { d, gap });
    }
    Ok(0.5 * (ld.abs() + ln.abs()))
}

/// Result of the `mu` selection.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MuChoice {
    pub mu: f64,
    /// Upper estimate of the largest generalized eigenvalue.
    pub lambda_max: f64,
    /// Smallest normalized margin `mu |y|^2 - <Ay, y> - |y|_{H1}^2` over random probes.
    pub probe_min: f64,
    pub lanczos_steps: usize,
}

fn zero_sum(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Rayleigh quotient operator `y -> Z (sym(A) + K / w) Z y` on zero-sum vectors.
fn mu_operator<'a>(a: &'a LinOp, k_h1: &'a LinOp) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
    let w = a.grid().w();
    move |y: &[f64]| {
        let ay = a.apply(y);
        let aty = a.apply_transpose(y);
        let ky = k_h1.apply(y);
        let mut out: Vec<f64> = (0..y.len()).map(|i| 0.5 * (ay[i] + aty[i]) + ky[i] / w).collect();
        zero_sum(&mut out);
        out
    }
}

/// Picks `mu = (1 + margin) * lambda_max`, where `lambda_max` bounds
/// `(<Ay, y> + |y|_{H1}^2) / |y|^2` over zero-mass `y`.
pub fn choose_mu(a: &LinOp, k_h1: &LinOp, margin: f64, seed: u64) -> Result<MuChoice> {
    a.expect_tag(OpTag::Generator)?;
    k_h1.expect_tag(OpTag::Gram)?;
    if a.grid() != k_h1.grid() {
        return Err(Error::GridMismatch);
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidInput(alloc::format!("margin must be nonnegative, got {margin}")));
    }
    let op = mu_operator(a, k_h1);
    let n = a.dim();
    let max_steps = (n - 1).min(300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    zero_sum(&mut q);
    let nq = norm(&q);
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut estimate = (f64::NAN, f64::INFINITY);
    let mut steps = 0;
    for j in 0..max_steps {
        steps = j + 1;
        let mut v = op(&basis[j]);
        let aj = dot(&v, &basis[j]);
        alpha.push(aj);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        zero_sum(&mut v);
        let bj = norm(&v);
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imax, theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        let resid = (bj * eig.eigenvectors[(m - 1, imax)]).abs();
        estimate = (theta, resid);
        if resid <= 1e-10 * theta.abs().max(1.0) || bj <= 1e-14 {
            break;
        }
        beta.push(bj);
        v.iter_mut().for_each(|x| *x /= bj);
        basis.push(v);
    }
    let (theta, resid) = estimate;
    if !theta.is_finite() {
        return Err(Error::NotConverged { what: "Lanczos", residual: resid, iterations: steps });
    }
    let lambda_max = theta + resid;
    let mu = (1.0 + margin) * lambda_max;
    let probe_min = mu_probe_min(a, k_h1, mu, 1000, seed ^ 0x9e37_79b9)?;
    Ok(MuChoice { mu, lambda_max, probe_min, lanczos_steps: steps })
}

/// Smallest value of `(mu |y|^2 - <Ay, y> - |y|_{H1}^2) / |y|^2` over random
/// zero-mass probes (weighted norms).
pub fn mu_probe_min(a: &LinOp, k_h1: &LinOp, mu: f64, probes: usize, seed: u64) -> Result<f64> {
    let w = a.grid().w();
    let n = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..probes {
        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        zero_sum(&mut y);
        let yy = w * dot(&y, &y);
        let aa = w * dot(&a.apply(&y), &y);
        let kk = dot(&k_h1.apply(&y), &y);
        worst = worst.min((mu * yy - aa - kk) / yy);
    }
    Ok(worst)
}

/// Dense oracle: largest eigenvalue of `(sym(What Ahat) + Khat) v = mu What v`.
pub fn mu_dense(ahat: &DMatrix<f64>, what: &DMatrix<f64>, khat: &DMatrix<f64>) -> Result<f64> {
    let chol = what
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("reduced mass gram is not positive definite".into()))?;
    let wa = what * ahat;
    let mut s = (&wa + wa.transpose()) * 0.5 + khat;
    dense::symmetrize_in_place(&mut s);
    let l = chol.l();
    let li = l.clone().try_inverse().ok_or_else(|| Error::Singular("mass gram factor".into()))?;
    let mut m = &li * s * li.transpose();
    dense::symmetrize_in_place(&mut m);
    let eig = SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// `|A^T (psi / rho) - lambda psi / rho|` relative: the discrete counterpart of
/// the correspondence `phi_i ~ exp(Phi) psi_i` between eigenvectors of `A` and `A*`.
pub fn dual_map_residual(a: &LinOp, psi: &[f64], rho_inf: &[f64], lambda: f64) -> f64 {
    let v: Vec<f64> = psi.iter().zip(rho_inf).map(|(p, r)| p / r).collect();
    rel_residual(a, &v, lambda, true)
}

pub fn vector_to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;
    use crate::operators::*;
    use crate::potential::{phi_field, Potential, PotentialSpec};

    fn generator(nx1: usize, nx2: usize, bounds: Rect, spec: &PotentialSpec) -> LinOp {
        let g = Grid2D::new(nx1, nx2, bounds).unwrap();
        generator_from_adjoint(&assemble_adjoint_generator(spec, &g)).unwrap()
    }

    fn domain() -> Rect {
        Rect::new(-1.5, 1.5, -1.0, 1.0)
    }

    #[test]
    fn flat_symmetrization_is_identity() {
        let spec = PotentialSpec::new(Potential::Flat, 1.0).unwrap();
        let a = generator(6, 5, Rect::UNIT, &spec);
        let (s, defect) = symmetrize(&a, &phi_field(&spec, a.grid())).unwrap();
        assert_eq!(s.matrix(), a.matrix());
        assert_eq!(defect, 0.0);
    }

    #[test]
    fn symmetry_defect_shrinks() {
        let spec = PotentialSpec::double_well();
        let d: Vec<f64> = [(12, 8), (24, 16), (48, 32)]
            .iter()
            .map(|&(n1, n2)| {
                let a = generator(n1, n2, domain(), &spec);
                symmetrize(&a, &phi_field(&spec, a.grid())).unwrap().1
            })
            .collect();
        assert!(d[1] < 0.6 * d[0] && d[2] < 0.6 * d[1], "{d:?}");
    }

    #[test]
    fn dense_and_shift_invert_agree() {
        let spec = PotentialSpec::double_well();
        let a = generator(20, 14, domain(), &spec);
        let dense_ev = dense::eigenvalues(&a.to_dense()).unwrap();
        let si = shift_invert_eigenvalues(&a, 6, 1).unwrap();
        for (x, y) in dense_ev.iter().zip(&si) {
            assert!((x.0 - y.0).abs() < 1e-9 * (1.0 + x.0.abs()), "{x:?} {y:?}");
        }
    }

    #[test]
    fn leading_pairs_are_certified() {
        let spec = PotentialSpec::double_well();
        let a = generator(16, 12, domain(), &spec);
        let sd = leading_eigenpairs(&a, 6).unwrap();
        assert_eq!(sd.method, SpectralMethod::Dense);
        assert_eq!(sd.lambda(1), 0.0);
        assert!(sd.lambda(2) < 0.0);
        assert!(sd.max_residual() <= RESIDUAL_TOL);
        let phi1 = sd.phi(1).unwrap();
        let c = phi1.values()[0];
        assert!(c > 0.0 && phi1.values().iter().all(|v| (v - c).abs() < 1e-12));
        for i in 1..=6 {
            let psi = sd.psi(i).unwrap();
            assert!((psi.weighted_norm() - 1.0).abs() < 1e-12);
            if i > 1 {
                assert!(psi.mass().abs() < 1e-10);
            }
        }
        for i in 1..6 {
            assert!(sd.lambda(i) >= sd.lambda(i + 1));
        }
    }

    #[test]
    fn neumann_laplacian_spectrum() {
        // unit square, nu = 1: continuum rates -pi^2 (i^2 + j^2), recovered at first order
        let spec = PotentialSpec::new(Potential::Flat, 1.0).unwrap();
        let pi2 = core::f64::consts::PI * core::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [9usize, 17, 33] {
            let a = generator(n, n, Rect::UNIT, &spec);
            let sd = leading_eigenpairs(&a, 4).unwrap();
            assert!(sd.max_residual() <= RESIDUAL_TOL);
            assert!((sd.lambda(2) - sd.lambda(3)).abs() < 1e-9 * pi2);
            let e = [(2, pi2), (3, pi2), (4, 2.0 * pi2)]
                .iter()
                .map(|&(i, exact)| (sd.lambda(i) + exact).abs() / exact)
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!(r > 1.7 && r < 2.3, "{errs:?}");
        }
    }

    #[test]
    fn delta_midpoint() {
        let g = Grid2D::new(3, 3, Rect::UNIT).unwrap();
        let mk = |re: f64| Eigenpair { re, im: 0.0, psi: None, phi: None, residual_right: 0.0, residual_left: 0.0 };
        let sd = SpectralData { grid: g, pairs: vec![mk(0.0), mk(-1.0), mk(-3.0)], method: SpectralMethod::Dense };
        assert_eq!(choose_delta(&sd, 2).unwrap(), 2.0);
        assert!(choose_delta(&sd, 1).is_err());
        assert!(choose_delta(&sd, 3).is_err());
        let flat = SpectralData { grid: g, pairs: vec![mk(0.0), mk(-1.0), mk(-1.0)], method: SpectralMethod::Dense };
        assert!(matches!(choose_delta(&flat, 2), Err(Error::NoSpectralGap { .. })));
    }

    #[test]
    fn mu_lanczos_matches_dense() {
        use crate::projection::{build_r, reduce_system, StateWeight};
        let spec = PotentialSpec::double_well();
        let a = generator(9, 7, domain(), &spec);
        let k = crate::grid::h1_gram(a.grid());
        let choice = choose_mu(&a, &k, 0.01, 3).unwrap();
        let rho = discrete_stationary(&a).unwrap();
        let map = build_r(&rho).unwrap();
        let b = ScalarField::zeros(*a.grid());
        let sys = reduce_system(&a, &b, &StateWeight::default(), &map, 0.0).unwrap();
        let khat = map.reduce_form(k.matrix());
        let exact = mu_dense(&sys.ahat, &sys.mass_gram(), &khat).unwrap();
        assert!((choice.lambda_max - exact).abs() < 1e-8 * exact.abs(), "{} {exact}", choice.lambda_max);
        assert!(choice.probe_min >= 0.0);
        assert!((choice.mu - 1.01 * choice.lambda_max).abs() < 1e-12 * choice.mu);
    }

    #[test]
    fn mu_flat_is_at_least_one() {
        let spec = PotentialSpec::new(Potential::Flat, 1.0).unwrap();
        let a = generator(10, 10, Rect::UNIT, &spec);
        let k = crate::grid::h1_gram(a.grid());
        assert!(choose_mu(&a, &k, 0.01, 0).unwrap().mu >= 1.0);
    }
}
