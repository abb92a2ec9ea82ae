//! Control shape functions: the singular elliptic problems
//! `div(rho_inf grad alpha) = rhs` with no-flux closure, controllability
//! margins, and the rotated-shape ablation.

use alloc::vec;
use alloc::vec::Vec;

use crate::banded::BandedLu;
use crate::error::{Error, Result};
use crate::grid::{dot, Grid2D, ScalarField};
use crate::operators::norm;
use crate::projection::{Projector, ReductionMap};
use crate::sparse::{LinOp, OpTag, TripletBuilder};
use crate::spectral::SpectralData;

pub const HAUTUS_TOL: f64 = 1e-6;

/// Flux-form `div(rho grad .)` with harmonic-mean face coefficients.
/// Symmetric, negative semidefinite, constants in the kernel.
pub fn elliptic_operator(rho_inf: &ScalarField, grid: &Grid2D) -> Result<LinOp> {
    if rho_inf.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let r = rho_inf.values();
    if r.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("elliptic coefficient must be positive".into()));
    }
    let k = grid.k();
    let mut tb = TripletBuilder::with_capacity(k, k, 5 * k);
    let mut face = |p: usize, q: usize, h: f64| {
        let c = 2.0 * r[p] * r[q] / (r[p] + r[q]) / (h * h);
        tb.push(p, q, c);
        tb.push(q, p, c);
        tb.push(p, p, -c);
        tb.push(q, q, -c);
    };
    for j in 0..grid.nx2() {
        for i in 0..grid.nx1() {
            let p = grid.index(i, j);
            if i + 1 < grid.nx1() {
                face(p, grid.index(i + 1, j), grid.h1());
            }
            if j + 1 < grid.nx2() {
                face(p, grid.index(i, j + 1), grid.h2());
            }
        }
    }
    Ok(LinOp::new(*grid, OpTag::Elliptic, tb.into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSolution {
    pub alpha: ScalarField,
    /// `|C alpha - rhs| / |rhs|` (absolute when `rhs = 0`).
    pub residual: f64,
    /// The right-hand side had to be projected onto zero mass first.
    pub projected: bool,
}

/// Zero-mean solution of `C alpha = rhs`, i.e. the pseudoinverse solution on
/// the range of `C`.
pub fn solve_shape(c: &LinOp, rhs: &ScalarField) -> Result<ShapeSolution> {
    c.expect_tag(OpTag::Elliptic)?;
    if c.grid() != rhs.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = *c.grid();
    let mut b = rhs.values().to_vec();
    let total: f64 = b.iter().map(|v| v.abs()).sum();
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let projected = mean.abs() * b.len() as f64 > 1e-10 * total;
    if projected {
        log::warn!("shape right-hand side has mass {:.3e}; projecting", grid.w() * mean * b.len() as f64);
    }
    b.iter_mut().for_each(|v| *v -= mean);
    let bn = norm(&b);
    if bn == 0.0 {
        return Ok(ShapeSolution { alpha: ScalarField::zeros(grid), residual: 0.0, projected });
    }
    // pin the node in the middle; the compatible system fixes everything else
    let pin = grid.index(grid.nx1() / 2, grid.nx2() / 2);
    let lu = BandedLu::factor_with_rows(c.matrix(), 0.0, &[pin])?;
    let mut rhs_pinned = b.clone();
    rhs_pinned[pin] = 0.0;
    let mut x = lu.solve(&rhs_pinned);
    let xm = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= xm);
    let cx = c.apply(&x);
    let res: Vec<f64> = cx.iter().zip(&b).map(|(a, b)| a - b).collect();
    let residual = norm(&res) / bn;
    if residual > 1e-10 {
        return Err(Error::NotConverged { what: "shape solve", residual, iterations: 1 });
    }
    Ok(ShapeSolution { alpha: ScalarField::new(grid, x)?, residual, projected })
}

/// Right-hand side `P sum_{i=2..d} exp(-Phi) phi_i` of the Riccati shape problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRhs {
    pub rhs: ScalarField,
    pub indices: Vec<usize>,
}

pub fn riccati_rhs(spec: &SpectralData, d: usize, phi_field: &ScalarField, p: &Projector) -> Result<ShapeRhs> {
    if d < 2 {
        return Err(Error::InvalidInput(alloc::format!("d must be at least 2, got {d}")));
    }
    if phi_field.grid() != &spec.grid {
        return Err(Error::GridMismatch);
    }
    let k = spec.grid.k();
    let weight: Vec<f64> = phi_field.values().iter().map(|f| libm::exp(-f)).collect();
    let mut acc = vec![0.0; k];
    let indices: Vec<usize> = (2..=d).collect();
    for &i in &indices {
        let phi = spec.phi(i)?;
        if !(spec.pair(i).residual_left <= crate::spectral::RESIDUAL_TOL) {
            return Err(Error::MissingEigenvectors(alloc::format!("eigenvector {i} is not certified")));
        }
        for (a, (e, f)) in acc.iter_mut().zip(weight.iter().zip(phi.values())) {
            *a += e * f;
        }
    }
    let rhs = ScalarField::new(spec.grid, p.apply(&acc))?;
    Ok(ShapeRhs { rhs, indices })
}

/// Right-hand side `psi_2` of the Lyapunov shape problem.
pub fn lyapunov_rhs(psi2: &ScalarField) -> Result<ScalarField> {
    let m = psi2.mass();
    let scale = psi2.grid().w() * psi2.values().iter().map(|v| v.abs()).sum::<f64>();
    if m.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(alloc::format!("psi_2 must have zero mass, has {m:.3e}")));
    }
    Ok(psi2.clone())
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HautusMargin {
    pub index: usize,
    pub lambda: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HautusReport {
    pub margins: Vec<HautusMargin>,
    pub threshold: f64,
}

impl HautusReport {
    pub fn passed(&self) -> bool {
        self.margins.iter().all(|m| m.margin >= self.threshold)
    }

    pub fn min(&self) -> Option<&HautusMargin> {
        self.margins.iter().min_by(|a, b| a.margin.total_cmp(&b.margin))
    }

    /// First failing mode, if any.
    pub fn first_failure(&self) -> Option<&HautusMargin> {
        self.margins.iter().find(|m| !(m.margin >= self.threshold))
    }
}

/// `m_j = |<Bhat, phihat_j>| / (|Bhat| |phihat_j|)` for `j = 2..=d`, with
/// `phihat_j` the reduced eigenvectors of `Ahat^T`.
pub fn hautus_margins(bhat: &[f64], spec: &SpectralData, d: usize, map: &ReductionMap) -> Result<HautusReport> {
    if bhat.len() != map.n() {
        return Err(Error::DimensionMismatch { expected: map.n(), found: bhat.len() });
    }
    let bn = norm(bhat);
    let mut margins = Vec::new();
    for j in 2..=d {
        let phi = spec.phi(j)?;
        let ph = map.reduce_dual(phi.values());
        let denom = bn * norm(&ph);
        let margin = if denom > 0.0 { dot(bhat, &ph).abs() / denom } else { 0.0 };
        margins.push(HautusMargin { index: j, lambda: spec.lambda(j), margin });
    }
    Ok(HautusReport { margins, threshold: HAUTUS_TOL })
}

fn bilinear(f: &ScalarField, x1: f64, x2: f64) -> f64 {
    let g = f.grid();
    let b = g.bounds();
    let s1 = ((x1 - b.a1) / g.h1()).clamp(0.0, (g.nx1() - 1) as f64);
    let s2 = ((x2 - b.a2) / g.h2()).clamp(0.0, (g.nx2() - 1) as f64);
    let i = (libm::floor(s1) as usize).min(g.nx1() - 2);
    let j = (libm::floor(s2) as usize).min(g.nx2() - 2);
    let (t1, t2) = (s1 - i as f64, s2 - j as f64);
    let v = f.values();
    let at = |i: usize, j: usize| v[g.index(i, j)];
    (1.0 - t1) * (1.0 - t2) * at(i, j)
        + t1 * (1.0 - t2) * at(i + 1, j)
        + (1.0 - t1) * t2 * at(i, j + 1)
        + t1 * t2 * at(i + 1, j + 1)
}

/// Quarter turn adapted to the rectangle: `alpha_rot(x) = alpha(c + T(x - c))`
/// with `T(x1, x2) = (s x2, -x1 / s)`, `s` the aspect ratio. Resampled
/// bilinearly and returned with zero mean.
pub fn rotate_shape(alpha: &ScalarField, grid: &Grid2D) -> Result<ScalarField> {
    if alpha.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let b = grid.bounds();
    let s = (b.b1 - b.a1) / (b.b2 - b.a2);
    let (c1, c2) = b.center();
    let out = ScalarField::from_fn(*grid, |x1, x2| {
        let (y1, y2) = (x1 - c1, x2 - c2);
        bilinear(alpha, c1 + s * y2, c2 - y1 / s)
    });
    Ok(out.zero_mean())
}
