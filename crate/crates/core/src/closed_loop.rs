//! Feedback laws on the full bilinear system `rho' = A rho + u N rho` and their
//! time integration.

use alloc::vec;
use core::ops::ControlFlow;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{eigenvalues, sort_desc};
use crate::error::{Error, Result};
use crate::grid::{dot, Grid2D, ScalarField};
use crate::integrate::{bs23_counted, OdeOptions, OdeStats};
use crate::lyapunov::{solve_lyapunov, LyapunovSolution};
use crate::projection::{ReducedSystem, ReductionMap};
use crate::riccati::RiccatiSolution;
use crate::sparse::{LinOp, OpTag};

/// Mass drift that aborts an integration.
pub const MASS_ABORT: f64 = 1e-8;

#[derive(Clone, Debug)]
pub enum FeedbackLaw {
    None,
    /// `u = -g . yhat` with `g = Pihat bhat`.
    Riccati { gain: DVector<f64>, map: ReductionMap },
    /// `u = -(bhat + Nhat yhat)^T (X + What) yhat`.
    Lyapunov { xw: DMatrix<f64>, bhat: DVector<f64>, n: LinOp, map: ReductionMap },
}

impl FeedbackLaw {
    pub fn riccati(sol: &RiccatiSolution, map: &ReductionMap) -> Self {
        FeedbackLaw::Riccati { gain: sol.gain.clone(), map: map.clone() }
    }

    /// `x` solves `Ahat^T X + X Ahat = -2 mu What`.
    pub fn lyapunov(sys: &ReducedSystem, x: &DMatrix<f64>, n: &LinOp) -> Result<Self> {
        n.expect_tag(OpTag::Control)?;
        if x.nrows() != sys.n() || n.dim() != sys.map.k() {
            return Err(Error::DimensionMismatch { expected: sys.n(), found: x.nrows() });
        }
        Ok(FeedbackLaw::Lyapunov { xw: x + sys.mass_gram(), bhat: sys.bhat.clone(), n: n.clone(), map: sys.map.clone() })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeedbackLaw::None => "none",
            FeedbackLaw::Riccati { .. } => "riccati",
            FeedbackLaw::Lyapunov { .. } => "lyapunov",
        }
    }

    /// Control for the deviation `y = rho - rho_inf`.
    pub fn control(&self, y: &[f64]) -> f64 {
        match self {
            FeedbackLaw::None => 0.0,
            FeedbackLaw::Riccati { gain, map } => -dot(gain.as_slice(), &map.restrict(y)),
            FeedbackLaw::Lyapunov { xw, bhat, n, map } => {
                let yh = DVector::from_vec(map.restrict(y));
                let z = xw * &yh;
                let nyh = map.restrict(&n.apply(&map.lift(yh.as_slice())));
                -(bhat.dot(&z) + dot(&nyh, z.as_slice()))
            }
        }
    }

    /// `V(y) = yhat^T (X + What) yhat` for the Lyapunov law.
    pub fn lyapunov_value(&self, y: &[f64]) -> Option<f64> {
        match self {
            FeedbackLaw::Lyapunov { xw, map, .. } => {
                let yh = DVector::from_vec(map.restrict(y));
                Some(yh.dot(&(xw * &yh)))
            }
            _ => None,
        }
    }
}

pub fn riccati_control(y: &ScalarField, law: &FeedbackLaw) -> Result<f64> {
    match law {
        FeedbackLaw::Riccati { .. } => Ok(law.control(y.values())),
        _ => Err(Error::InvalidInput(alloc::format!("expected a Riccati law, got {}", law.name()))),
    }
}

pub fn lyapunov_control(y: &ScalarField, law: &FeedbackLaw) -> Result<f64> {
    match law {
        FeedbackLaw::Lyapunov { .. } => Ok(law.control(y.values())),
        _ => Err(Error::InvalidInput(alloc::format!("expected a Lyapunov law, got {}", law.name()))),
    }
}

/// `X = What Upsilon` from `Ahat^T X + X Ahat = -2 mu What`.
pub fn solve_upsilon(sys: &ReducedSystem, mu: f64) -> Result<LyapunovSolution> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(alloc::format!("mu must be positive, got {mu}")));
    }
    solve_lyapunov(&sys.ahat, &(sys.mass_gram() * (2.0 * mu)))
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryRecord {
    pub t: Vec<f64>,
    /// Weighted L2 norm of `rho - rho_inf`.
    pub l2dev: Vec<f64>,
    pub u: Vec<f64>,
    pub mass: Vec<f64>,
    pub min_rho: Vec<f64>,
    /// Lyapunov function values, for the Lyapunov law only.
    pub v: Option<Vec<f64>>,
    pub stats: OdeStats,
    pub tol: f64,
    pub law: alloc::string::String,
    /// Why the integration stopped early, for runs kept after a failure.
    pub failure: Option<alloc::string::String>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Settings for [`simulate_partial`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunOptions {
    pub tol: f64,
    /// Stop once the deviation falls below this fraction of the initial one.
    pub stop_below: Option<f64>,
}

impl RunOptions {
    pub fn with_tol(tol: f64) -> Self {
        RunOptions { tol, stop_below: None }
    }
}

pub fn sample_times(t_end: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count).map(|i| t_end * i as f64 / (count - 1) as f64).collect()
}

/// Integrates the controlled system from `rho0`, evaluating the feedback at
/// every stage. `snapshot` receives the full density at each sample.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with<S>(
    a: &LinOp,
    n: &LinOp,
    rho_inf: &ScalarField,
    rho0: &ScalarField,
    law: &FeedbackLaw,
    times: &[f64],
    tol: f64,
    snapshot: S,
) -> Result<TrajectoryRecord>
where
    S: FnMut(f64, &[f64]),
{
    let (rec, status) = run(a, n, rho_inf, rho0, law, times, RunOptions::with_tol(tol), snapshot)?;
    status.map(|_| rec)
}

/// Like [`simulate_with`], but an integration failure (step-size underflow
/// from a blow-up, mass drift) ends the record instead of discarding it.
#[allow(clippy::too_many_arguments)]
pub fn simulate_partial<S>(
    a: &LinOp,
    n: &LinOp,
    rho_inf: &ScalarField,
    rho0: &ScalarField,
    law: &FeedbackLaw,
    times: &[f64],
    opts: RunOptions,
    snapshot: S,
) -> Result<TrajectoryRecord>
where
    S: FnMut(f64, &[f64]),
{
    let (mut rec, status) = run(a, n, rho_inf, rho0, law, times, opts, snapshot)?;
    if let Err(e) = status {
        log::warn!("{} run stopped: {e}", rec.law);
        rec.failure = Some(alloc::format!("{e}"));
    }
    Ok(rec)
}

// outer error: invalid input; inner: integration failure after some samples
#[allow(clippy::too_many_arguments)]
fn run<S>(
    a: &LinOp,
    n: &LinOp,
    rho_inf: &ScalarField,
    rho0: &ScalarField,
    law: &FeedbackLaw,
    times: &[f64],
    opts: RunOptions,
    mut snapshot: S,
) -> Result<(TrajectoryRecord, Result<()>)>
where
    S: FnMut(f64, &[f64]),
{
    a.expect_tag(OpTag::Generator)?;
    n.expect_tag(OpTag::Control)?;
    let tol = opts.tol;
    let k = a.dim();
    if n.dim() != k || rho_inf.len() != k || rho0.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: rho0.len() });
    }
    if !(1e-10..=1e-3).contains(&tol) {
        return Err(Error::InvalidInput(alloc::format!("tolerance {tol} outside [1e-10, 1e-3]")));
    }
    let m0 = rho0.mass();
    if (m0 - 1.0).abs() > 1e-10 {
        return Err(Error::NonUnitMass(m0));
    }
    let w = rho0.grid().w();
    let rinf = rho_inf.values();
    let b = n.apply(rinf);
    let y0: Vec<f64> = rho0.values().iter().zip(rinf).map(|(r, q)| r - q).collect();
    let mut rec = TrajectoryRecord {
        v: law.lyapunov_value(&y0).map(|_| Vec::new()),
        tol,
        law: law.name().into(),
        ..Default::default()
    };
    let mut ny = vec![0.0; k];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        a.matrix().mul_vec_into(y, dy);
        let u = law.control(y);
        if u != 0.0 {
            n.matrix().mul_vec_into(y, &mut ny);
            for i in 0..k {
                dy[i] += u * (ny[i] + b[i]);
            }
        }
        // columns of A and N sum to zero; strip the roundoff so that large
        // gains over many small steps do not leak mass
        let drift = dy.iter().sum::<f64>() / k as f64;
        dy.iter_mut().for_each(|v| *v -= drift);
        Ok(())
    };
    let mut rho = vec![0.0; k];
    let out = |t: f64, y: &[f64]| -> Result<ControlFlow<()>> {
        for i in 0..k {
            rho[i] = y[i] + rinf[i];
        }
        let mass = w * rho.iter().sum::<f64>();
        if (mass - m0).abs() > MASS_ABORT {
            return Err(Error::MassDrift { t, drift: mass - m0 });
        }
        let dev = libm::sqrt(w * dot(y, y));
        rec.t.push(t);
        rec.l2dev.push(dev);
        rec.u.push(law.control(y));
        rec.mass.push(mass);
        rec.min_rho.push(rho.iter().copied().fold(f64::INFINITY, f64::min));
        if let Some(v) = rec.v.as_mut() {
            v.push(law.lyapunov_value(y).unwrap_or(f64::NAN));
        }
        snapshot(t, &rho);
        match opts.stop_below {
            Some(f) if dev <= f * rec.l2dev[0] => Ok(ControlFlow::Break(())),
            _ => Ok(ControlFlow::Continue(())),
        }
    };
    let ode = OdeOptions::with_tol(tol);
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut stats = OdeStats::default();
    let status = bs23_counted(rhs, t0, &y0, times, &ode, out, &mut stats);
    rec.stats = stats;
    Ok((rec, status))
}

pub fn simulate(
    a: &LinOp,
    n: &LinOp,
    rho_inf: &ScalarField,
    rho0: &ScalarField,
    law: &FeedbackLaw,
    times: &[f64],
    tol: f64,
) -> Result<TrajectoryRecord> {
    simulate_with(a, n, rho_inf, rho0, law, times, tol, |_, _| {})
}

/// Indicator of the node nearest `(x1, x2)` with unit mass.
pub fn point_mass(grid: &Grid2D, x1: f64, x2: f64) -> ScalarField {
    let mut f = ScalarField::zeros(*grid);
    let p = grid.nearest_node(x1, x2);
    f.values_mut()[p] = 1.0 / grid.w();
    f
}

/// Uniform positive noise per node, normalized to unit mass.
pub fn random_state(grid: &Grid2D, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = ScalarField::new(*grid, (0..grid.k()).map(|_| rng.gen::<f64>()).collect()).expect("one value per node");
    let m = f.mass();
    f.map(|v| v / m)
}

/// `rho_inf + y0` with a random zero-mass `y0` of weighted norm `eps`, shaped
/// like `rho_inf` so that small perturbations stay nonnegative.
pub fn perturbed_state(rho_inf: &ScalarField, eps: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rho_inf.grid().w();
    let r = rho_inf.values();
    let mut y: Vec<f64> = r.iter().map(|q| q * rng.gen_range(-1.0..1.0)).collect();
    let m = w * y.iter().sum::<f64>();
    for (v, q) in y.iter_mut().zip(r) {
        *v -= m * q;
    }
    let s = eps / libm::sqrt(w * dot(&y, &y));
    let vals = r.iter().zip(&y).map(|(q, v)| q + s * v).collect();
    ScalarField::new(*rho_inf.grid(), vals).expect("one value per node")
}

/// Least-squares decay rate of `l2dev` over samples with
/// `l2dev / l2dev[0]` inside `[lo, hi]`.
pub fn fit_rate(rec: &TrajectoryRecord, lo: f64, hi: f64) -> Option<f64> {
    let y0 = *rec.l2dev.first()?;
    let pts: Vec<(f64, f64)> = rec
        .t
        .iter()
        .zip(&rec.l2dev)
        .filter(|(_, &v)| v >= lo * y0 && v <= hi * y0 && v > 0.0)
        .map(|(&t, &v)| (t, libm::log(v)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sl) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (tm, lm) = (st / m, sl / m);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, l) in &pts {
        sxy += (t - tm) * (l - lm);
        sxx += (t - tm) * (t - tm);
    }
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// First time `l2dev` falls to `frac * l2dev[0]`, interpolated between samples.
pub fn time_to_fraction(rec: &TrajectoryRecord, frac: f64) -> Option<f64> {
    let target = frac * rec.l2dev.first()?;
    for i in 1..rec.len() {
        let (a, b) = (rec.l2dev[i - 1], rec.l2dev[i]);
        if b <= target {
            let s = if a > b { (a - target) / (a - b) } else { 1.0 };
            return Some(rec.t[i - 1] + s * (rec.t[i] - rec.t[i - 1]));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostics {
    pub rate: Option<f64>,
    pub time_to_1pct: Option<f64>,
    pub max_mass_drift: f64,
    pub min_rho: f64,
    /// Largest increase of `V` between consecutive samples.
    pub max_v_increase: Option<f64>,
}

pub const DEFAULT_WINDOW: (f64, f64) = (1e-6, 1e-1);

pub fn diagnostics(rec: &TrajectoryRecord, window: (f64, f64)) -> Diagnostics {
    let m0 = rec.mass.first().copied().unwrap_or(1.0);
    Diagnostics {
        rate: fit_rate(rec, window.0, window.1),
        time_to_1pct: time_to_fraction(rec, 0.01),
        max_mass_drift: rec.mass.iter().fold(0.0, |s, m| s.max((m - m0).abs())),
        min_rho: rec.min_rho.iter().copied().fold(f64::INFINITY, f64::min),
        max_v_increase: rec
            .v
            .as_ref()
            .map(|v| v.windows(2).fold(f64::NEG_INFINITY, |s, p| s.max(p[1] - p[0]))),
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClosedLoopSpectrum {
    pub lambda2: f64,
    pub lambda2_tilde: f64,
    pub formula: f64,
    /// `|lambda2_tilde - formula| / |formula|`.
    pub formula_error: f64,
    /// Largest relative move of the remaining eigenvalues.
    pub max_drift: f64,
    /// The modified eigenvalue collides with another one.
    pub degenerate: bool,
}

/// Spectrum of `Ahat - bhat bhat^T (X + What)` against the prediction
/// `lambda2 - |psi2|^2 + (mu / lambda2) |psi2|^2`, where `bhat` is the reduced
/// second eigenvector `psi2`.
pub fn closed_loop_spectrum(sys: &ReducedSystem, x: &DMatrix<f64>, mu: f64, lambda2: f64) -> Result<ClosedLoopSpectrum> {
    let wh = sys.mass_gram();
    let b = &sys.bhat;
    let psi_sq = b.dot(&(&wh * b));
    let formula = lambda2 - psi_sq + mu / lambda2 * psi_sq;
    let cl = &sys.ahat - b * (b.transpose() * (x + &wh));
    let mut open = eigenvalues(&sys.ahat)?;
    let mut closed = eigenvalues(&cl)?;
    sort_desc(&mut open);
    sort_desc(&mut closed);
    let nearest = |v: &[(f64, f64)], z: f64| {
        (0..v.len()).min_by(|&i, &j| (v[i].0 - z).abs().total_cmp(&(v[j].0 - z).abs())).unwrap()
    };
    let ic = nearest(&closed, formula);
    let lambda2_tilde = closed.remove(ic).0;
    let io = nearest(&open, lambda2);
    open.remove(io);
    let max_drift = open
        .iter()
        .zip(&closed)
        .map(|(o, c)| libm::hypot(o.0 - c.0, o.1 - c.1) / libm::hypot(o.0, o.1))
        .fold(0.0, f64::max);
    let degenerate = open.iter().any(|o| (o.0 - lambda2_tilde).abs() <= 1e-8 * lambda2_tilde.abs().max(1.0));
    Ok(ClosedLoopSpectrum {
        lambda2,
        lambda2_tilde,
        formula,
        formula_error: (lambda2_tilde - formula).abs() / formula.abs(),
        max_drift,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;

    #[test]
    fn point_mass_has_unit_mass() {
        let g = Grid2D::new(24, 16, Rect::new(-1.5, 1.5, -1.0, 1.0)).unwrap();
        let p = point_mass(&g, 1.0, 0.0);
        assert!((p.mass() - 1.0).abs() < 1e-14);
        let idx = p.values().iter().position(|&v| v > 0.0).unwrap();
        let (x1, x2) = g.point(idx);
        assert!((x1 - 1.0).abs() <= g.h1() / 2.0 && x2.abs() <= g.h2() / 2.0 + 1e-12);
        let r = random_state(&g, 3);
        assert!((r.mass() - 1.0).abs() < 1e-13);
        assert!(r.values().iter().all(|&v| v >= 0.0));
        assert_eq!(r, random_state(&g, 3));
    }

    #[test]
    fn rate_fit_recovers_exponential() {
        let t = sample_times(10.0, 201);
        let rec = TrajectoryRecord {
            l2dev: t.iter().map(|&s| 3.0 * libm::exp(-1.7 * s)).collect(),
            t,
            ..Default::default()
        };
        assert!((fit_rate(&rec, 1e-6, 1e-1).unwrap() - 1.7).abs() < 1e-10);
        let t1 = time_to_fraction(&rec, 0.01).unwrap();
        assert!((t1 - libm::log(100.0) / 1.7).abs() < 0.01);
    }
}
