//! Adaptive Bogacki-Shampine 2(3) pair with FSAL and cubic Hermite dense output.

use alloc::vec;
use alloc::vec::Vec;

use core::ops::ControlFlow;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; chosen from the initial slope when `None`.
    pub h0: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol, ..Self::default() }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-6, atol: 1e-6, h0: None, h_max: f64::INFINITY, max_steps: 10_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn err_norm(e: &[f64], y0: &[f64], y1: &[f64], o: &OdeOptions) -> f64 {
    let mut s = 0.0;
    for i in 0..e.len() {
        let sc = o.atol + o.rtol * y0[i].abs().max(y1[i].abs());
        let r = e[i] / sc;
        s += r * r;
    }
    libm::sqrt(s / e.len().max(1) as f64)
}

/// Integrates `y' = f(t, y)` from `t0` through the increasing sample `times`
/// (all `>= t0`), calling `out(t, y)` at each of them; `out` may end the
/// integration early by returning `ControlFlow::Break`.
pub fn bs23<F, O>(f: F, t0: f64, y0: &[f64], times: &[f64], opts: &OdeOptions, out: O) -> Result<OdeStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]) -> Result<ControlFlow<()>>,
{
    let mut stats = OdeStats::default();
    bs23_counted(f, t0, y0, times, opts, out, &mut stats)?;
    Ok(stats)
}

/// [`bs23`] with the counters kept in `stats`, so they survive a failure.
pub fn bs23_counted<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    times: &[f64],
    opts: &OdeOptions,
    mut out: O,
    stats: &mut OdeStats,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]) -> Result<ControlFlow<()>>,
{
    let n = y0.len();
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|&s| s < t0) {
        return Err(Error::InvalidInput("sample times must increase from t0".into()));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    f(t, &y, &mut k1)?;
    stats.evaluations += 1;
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut tmp, mut y1, mut e) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    // compensated update: keeps linear invariants (mass) at roundoff of the
    // increments rather than of the state
    let (mut comp, mut comp1) = (vec![0.0; n], vec![0.0; n]);
    let mut next = 0;
    while next < times.len() && times[next] == t {
        if out(t, &y)?.is_break() {
            return Ok(());
        }
        next += 1;
    }
    let t_end = match times.last() {
        Some(&te) => te,
        None => return Ok(()),
    };
    let mut h = match opts.h0 {
        Some(h) => h,
        None => {
            let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
            let d0 = libm::sqrt(y.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / n.max(1) as f64);
            let d1 = libm::sqrt(k1.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / n.max(1) as f64);
            if d0 < 1e-5 || d1 < 1e-5 {
                1e-6
            } else {
                0.01 * d0 / d1
            }
        }
    }
    .min(opts.h_max)
    .min(t_end - t);
    while next < times.len() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::NotConverged { what: "ode steps", residual: h, iterations: opts.max_steps });
        }
        // absorb a rounding-sized remainder into the final step
        let last = t + h >= t_end - 64.0 * f64::EPSILON * t_end.abs().max(1.0);
        if last {
            h = t_end - t;
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.75 * h * k2[i];
        }
        f(t + 0.75 * h, &tmp, &mut k3)?;
        for i in 0..n {
            let inc = h * (2.0 / 9.0 * k1[i] + 1.0 / 3.0 * k2[i] + 4.0 / 9.0 * k3[i]) + comp[i];
            y1[i] = y[i] + inc;
            comp1[i] = inc - (y1[i] - y[i]);
        }
        let t1 = if last { t_end } else { t + h };
        f(t1, &y1, &mut k4)?;
        stats.evaluations += 3;
        for i in 0..n {
            e[i] = h * (-5.0 / 72.0 * k1[i] + 1.0 / 12.0 * k2[i] + 1.0 / 9.0 * k3[i] - 0.125 * k4[i]);
        }
        let err = err_norm(&e, &y, &y1, opts);
        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.2;
            continue;
        }
        if err > 1.0 {
            stats.rejected += 1;
            h *= (0.9 * libm::cbrt(1.0 / err)).max(0.2);
            continue;
        }
        stats.accepted += 1;
        while next < times.len() && times[next] <= t1 {
            let s = (times[next] - t) / h;
            let flow = if times[next] == t1 {
                out(t1, &y1)?
            } else {
                // cubic Hermite on (y, k1) -> (y1, k4)
                let (h00, h10) = ((1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s), s * (1.0 - s) * (1.0 - s));
                let (h01, h11) = (s * s * (3.0 - 2.0 * s), s * s * (s - 1.0));
                for i in 0..n {
                    tmp[i] = h00 * y[i] + h * h10 * k1[i] + h01 * y1[i] + h * h11 * k4[i];
                }
                out(times[next], &tmp)?
            };
            if flow.is_break() {
                return Ok(());
            }
            next += 1;
        }
        t = t1;
        core::mem::swap(&mut y, &mut y1);
        core::mem::swap(&mut comp, &mut comp1);
        core::mem::swap(&mut k1, &mut k4);
        let fac = if err == 0.0 { 5.0 } else { (0.9 * libm::cbrt(1.0 / err)).clamp(0.2, 5.0) };
        h = (h * fac).min(opts.h_max);
    }
    Ok(())
}
