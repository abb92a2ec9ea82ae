//! Side-by-side comparison of run directories.

use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use crate::io::{read_trajectory_csv, TrajectoryColumns};
use crate::run::{read_manifest, Manifest, TRAJECTORY};

pub struct RunSummary {
    pub label: String,
    pub manifest: Manifest,
    pub trajectory: TrajectoryColumns,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let trajectory = read_trajectory_csv(&dir.join(TRAJECTORY))?;
        Ok(RunSummary { label: manifest.config.control.controller.name().to_string(), manifest, trajectory })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub label: String,
    pub rate: Option<f64>,
    pub time_to_1pct: Option<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub t: Vec<f64>,
    /// One deviation column per run, on `t`.
    pub columns: Vec<(String, Vec<f64>)>,
    pub metrics: Vec<RunMetrics>,
}

fn interp(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    match ts.iter().position(|&s| s >= t) {
        Some(0) => vs[0],
        Some(i) => {
            let s = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            vs[i - 1] + s * (vs[i] - vs[i - 1])
        }
        None => f64::NAN,
    }
}

/// Aligns the runs on the union horizon by linear interpolation: the
/// longest run's sample times, NaN past the end of shorter runs.
pub fn compare_runs(runs: &[RunSummary]) -> Result<Comparison> {
    let Some(first) = runs.first() else { bail!("nothing to compare") };
    let c0 = &first.manifest.config;
    for r in &runs[1..] {
        let c = &r.manifest.config;
        if c.grid != c0.grid || c.model != c0.model {
            bail!("runs {} and {} use different grids or models", first.label, r.label);
        }
        let s = (&c.simulation.scenario, c.simulation.seed, &c.simulation.initial);
        if s != (&c0.simulation.scenario, c0.simulation.seed, &c0.simulation.initial) {
            bail!("runs {} and {} use different scenarios", first.label, r.label);
        }
    }
    let longest = runs
        .iter()
        .max_by(|a, b| {
            let end = |r: &RunSummary| r.trajectory.t.last().copied().unwrap_or(0.0);
            end(a).total_cmp(&end(b))
        })
        .expect("nonempty");
    let t = longest.trajectory.t.clone();
    let mut columns = Vec::new();
    let mut metrics = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let mut label = r.label.clone();
        if runs[..i].iter().any(|o| o.label == r.label) {
            label = format!("{label}_{i}");
        }
        let col = t.iter().map(|&s| interp(&r.trajectory.t, &r.trajectory.l2dev, s)).collect();
        columns.push((label.clone(), col));
        let d = &r.manifest.diagnostics;
        metrics.push(RunMetrics {
            label,
            rate: d.rate,
            time_to_1pct: d.time_to_1pct,
            diverged: r.manifest.failure.is_some(),
        });
    }
    Ok(Comparison { t, columns, metrics })
}

pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    let mut header = vec!["t".to_string()];
    header.extend(cmp.columns.iter().map(|(l, _)| l.clone()));
    w.write_record(&header)?;
    for (i, t) in cmp.t.iter().enumerate() {
        let mut row = vec![format!("{t:e}")];
        row.extend(cmp.columns.iter().map(|(_, c)| if c[i].is_nan() { String::new() } else { format!("{:e}", c[i]) }));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["run", "rate", "time_to_1pct", "diverged"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for m in &cmp.metrics {
        w.write_record([m.label.clone(), opt(m.rate), opt(m.time_to_1pct), m.diverged.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Time to 1%, with runs that never get there (or diverge) as infinity.
pub fn time_to_1pct_or_inf(m: &RunMetrics) -> f64 {
    if m.diverged {
        return f64::INFINITY;
    }
    m.time_to_1pct.unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let ts = [0.0, 1.0, 2.0];
        let vs = [1.0, 3.0, 5.0];
        assert_eq!(interp(&ts, &vs, 0.5), 2.0);
        assert_eq!(interp(&ts, &vs, 0.0), 1.0);
        assert_eq!(interp(&ts, &vs, 2.0), 5.0);
        assert!(interp(&ts, &vs, 2.5).is_nan());
    }
}
