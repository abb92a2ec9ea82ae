//! Upwind assembly of the generator, its adjoint and the control operator.
//!
//! Both `A*` and `N*` are assembled as backward generators on the grid graph:
//! every node exchanges with its (up to four) neighbours at rate
//! `nu / h^2 + max(+-b, 0) / h`, where `b` is the drift component toward that
//! neighbour. Missing neighbours are simply dropped, which is the
//! homogeneous-Neumann closure and leaves the constants in the kernel.
//! The forward operators are the transposes.

use alloc::vec;
use alloc::vec::Vec;

use crate::banded::BandedLu;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::potential::PotentialSpec;
use crate::sparse::{CsrMatrix, LinOp, OpTag, TripletBuilder};

/// Backward generator `nu * Lap + b . grad` with first-order upwinding.
fn drift_diffusion(grid: &Grid2D, nu: f64, b1: &[f64], b2: &[f64]) -> CsrMatrix {
    let k = grid.k();
    let (h1, h2) = (grid.h1(), grid.h2());
    let (d1, d2) = (nu / (h1 * h1), nu / (h2 * h2));
    let mut tb = TripletBuilder::with_capacity(k, k, 5 * k);
    for j in 0..grid.nx2() {
        for i in 0..grid.nx1() {
            let p = grid.index(i, j);
            let mut diag = 0.0;
            let mut link = |q: usize, rate: f64| {
                if rate != 0.0 {
                    tb.push(p, q, rate);
                }
                diag -= rate;
            };
            if i + 1 < grid.nx1() {
                link(grid.index(i + 1, j), d1 + b1[p].max(0.0) / h1);
            }
            if i > 0 {
                link(grid.index(i - 1, j), d1 + (-b1[p]).max(0.0) / h1);
            }
            if j + 1 < grid.nx2() {
                link(grid.index(i, j + 1), d2 + b2[p].max(0.0) / h2);
            }
            if j > 0 {
                link(grid.index(i, j - 1), d2 + (-b2[p]).max(0.0) / h2);
            }
            tb.push(p, p, diag);
        }
    }
    tb.into()
}

/// `A* phi = nu Lap(phi) - grad G . grad(phi)` with reflecting closure.
pub fn assemble_adjoint_generator(spec: &PotentialSpec, grid: &Grid2D) -> LinOp {
    let k = grid.k();
    let mut b1 = vec![0.0; k];
    let mut b2 = vec![0.0; k];
    for p in 0..k {
        let (x1, x2) = grid.point(p);
        let (g1, g2) = spec.potential.gradient(x1, x2);
        b1[p] = -g1;
        b2[p] = -g2;
    }
    LinOp::new(*grid, OpTag::AdjointGenerator, drift_diffusion(grid, spec.nu, &b1, &b2))
}

pub fn generator_from_adjoint(astar: &LinOp) -> Result<LinOp> {
    astar.expect_tag(OpTag::AdjointGenerator)?;
    Ok(astar.transpose_as(OpTag::Generator))
}

/// Kernel of the assembled generator, normalized to unit mass.
///
/// One equation of the singular system is replaced by a pin on the node with
/// the slowest exit rate (a proxy for large stationary mass); the rest is a
/// banded solve.
pub fn discrete_stationary(a: &LinOp) -> Result<ScalarField> {
    a.expect_tag(OpTag::Generator)?;
    let grid = *a.grid();
    let m = a.matrix();
    let diag = m.diagonal();
    let pin = (0..diag.len())
        .min_by(|&p, &q| diag[p].abs().total_cmp(&diag[q].abs()))
        .unwrap_or(0);
    let lu = BandedLu::factor_with_rows(m, 0.0, &[pin]).map_err(|_| Error::KernelDeficient {
        residual: f64::NAN,
    })?;
    let mut rhs = vec![0.0; grid.k()];
    rhs[pin] = 1.0;
    let mut rho = lu.solve(&rhs);
    let mass = grid.w() * rho.iter().sum::<f64>();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::KernelDeficient { residual: mass });
    }
    rho.iter_mut().for_each(|v| *v /= mass);
    // the pinned row is the only equation not enforced by the solve
    let r = m.mul_vec(&rho);
    let rel = norm(&r) / (m.frobenius_norm() * norm(&rho));
    if rel > 1e-10 {
        return Err(Error::KernelDeficient { residual: rel });
    }
    let peak = rho.iter().cloned().fold(0.0, f64::max);
    if rho.iter().any(|&v| v < -1e-12 * peak) {
        return Err(Error::KernelDeficient { residual: rel });
    }
    rho.iter_mut().for_each(|v| *v = v.max(0.0));
    ScalarField::new(grid, rho)
}

/// Centered-difference gradient of a nodal field. At boundary nodes the
/// normal component is set to zero (no-flux shape condition).
pub fn field_gradient(f: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let g = f.grid();
    let v = f.values();
    let k = g.k();
    let mut g1 = vec![0.0; k];
    let mut g2 = vec![0.0; k];
    let (n1, n2) = (g.nx1(), g.nx2());
    for j in 0..n2 {
        for i in 0..n1 {
            let p = g.index(i, j);
            if i > 0 && i + 1 < n1 {
                g1[p] = (v[g.index(i + 1, j)] - v[g.index(i - 1, j)]) / (2.0 * g.h1());
            }
            if j > 0 && j + 1 < n2 {
                g2[p] = (v[g.index(i, j + 1)] - v[g.index(i, j - 1)]) / (2.0 * g.h2());
            }
        }
    }
    (g1, g2)
}

/// `N` as the transpose of the upwinded `N* phi = -grad(alpha) . grad(phi)`.
pub fn assemble_control_operator(alpha: &ScalarField, grid: &Grid2D) -> Result<LinOp> {
    if alpha.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let (mut g1, mut g2) = field_gradient(alpha);
    g1.iter_mut().for_each(|v| *v = -*v);
    g2.iter_mut().for_each(|v| *v = -*v);
    let nstar = drift_diffusion(grid, 0.0, &g1, &g2);
    Ok(LinOp::new(*grid, OpTag::Control, nstar.transpose()))
}

/// `B = N rho_inf`.
pub fn control_vector(n: &LinOp, rho_inf: &ScalarField) -> Result<ScalarField> {
    n.expect_tag(OpTag::Control)?;
    if n.grid() != rho_inf.grid() {
        return Err(Error::GridMismatch);
    }
    ScalarField::new(*n.grid(), n.apply(rho_inf.values()))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}
