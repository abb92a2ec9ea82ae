//! The scenario matrix: both initial states under every controller, plus
//! the qualitative claims checked against it.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fpk_core::closed_loop::DEFAULT_WINDOW;
use serde::{Deserialize, Serialize};

use crate::compare::{compare_runs, time_to_1pct_or_inf, write_comparison, Comparison, RunSummary};
use crate::config::{Controller, ExperimentConfig, Scenario};
use crate::pipeline;
use crate::run::{run_with_model, Manifest};

pub const SCENARIOS: [Scenario; 2] = [Scenario::RandomInit, Scenario::PointMass];
pub const CONTROLLERS: [Controller; 4] =
    [Controller::None, Controller::Riccati, Controller::Lyapunov, Controller::RiccatiRotatedAlpha];

/// Required speed-up of the synthesized controllers over the free system.
pub const SPEEDUP: f64 = 5.0;
pub const RATE_TOL: f64 = 0.1;
/// Early stop used when the base config sets none; below the rate window.
pub const DEFAULT_STOP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Claim {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Claim { name: name.into(), passed, detail }
    }
}

pub struct ScenarioReport {
    pub claims: Vec<Claim>,
    /// `(scenario, controller, run directory, manifest)`
    pub runs: Vec<(Scenario, Controller, PathBuf, Manifest)>,
    pub comparisons: Vec<(Scenario, Comparison)>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed) && self.runs.iter().all(|r| r.3.passed)
    }

    fn manifest(&self, s: Scenario, c: Controller) -> &Manifest {
        &self.runs.iter().find(|r| r.0 == s && r.1 == c).expect("every cell is run").3
    }
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::RandomInit => "random_init",
        Scenario::PointMass => "point_mass",
        Scenario::Custom => "custom",
    }
}

/// Runs the matrix under `out/<scenario>/<controller>` and writes one
/// comparison per scenario plus `claims.json`.
pub fn run_matrix(base: &ExperimentConfig, out: &Path) -> Result<ScenarioReport> {
    let mut runs = Vec::new();
    for controller in CONTROLLERS {
        let mut cfg = base.clone();
        cfg.control.controller = controller;
        cfg.simulation.stop_below.get_or_insert(DEFAULT_STOP);
        cfg.validate()?;
        log::info!("preparing {}", controller.name());
        let (model, hit) = pipeline::prepare(&cfg).with_context(|| format!("controller {}", controller.name()))?;
        // the two scenarios share the model and write to separate directories
        let results: Vec<Result<_>> = std::thread::scope(|scope| {
            let handles: Vec<_> = SCENARIOS
                .iter()
                .map(|&scenario| {
                    let mut c = cfg.clone();
                    c.simulation.scenario = scenario;
                    let dir = out.join(scenario_name(scenario)).join(controller.name());
                    c.output.dir = dir.clone();
                    let model = &model;
                    scope.spawn(move || {
                        let r = run_with_model(&c, model, hit, &dir)?;
                        Ok((scenario, controller, dir, r.manifest))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
        });
        for r in results {
            runs.push(r?);
        }
    }

    let mut comparisons = Vec::new();
    for scenario in SCENARIOS {
        let dirs: Vec<_> = runs.iter().filter(|r| r.0 == scenario).map(|r| r.2.clone()).collect();
        let summaries = dirs.iter().map(|d| RunSummary::load(d)).collect::<Result<Vec<_>>>()?;
        let cmp = compare_runs(&summaries)?;
        write_comparison(&out.join(scenario_name(scenario)), &cmp)?;
        comparisons.push((scenario, cmp));
    }

    let mut report = ScenarioReport { claims: Vec::new(), runs, comparisons };
    report.claims = claims(&report);
    std::fs::write(out.join("claims.json"), serde_json::to_string_pretty(&report.claims)?)?;
    Ok(report)
}

fn claims(report: &ScenarioReport) -> Vec<Claim> {
    let mut v = Vec::new();
    let t1 = |s, c| {
        let m = report.manifest(s, c);
        time_to_1pct_or_inf(&crate::compare::RunMetrics {
            label: String::new(),
            rate: m.diagnostics.rate,
            time_to_1pct: m.diagnostics.time_to_1pct,
            diverged: m.failure.is_some(),
        })
    };

    let free = t1(Scenario::PointMass, Controller::None);
    for c in [Controller::Riccati, Controller::Lyapunov] {
        let t = t1(Scenario::PointMass, c);
        v.push(Claim::new(
            &format!("point mass: {} reaches 1% at least {SPEEDUP}x sooner", c.name()),
            free >= SPEEDUP * t,
            format!("uncontrolled {free:.4}, {} {t:.4}, ratio {:.1}", c.name(), free / t),
        ));
    }

    for s in SCENARIOS {
        let good = t1(s, Controller::Riccati);
        let rot = t1(s, Controller::RiccatiRotatedAlpha);
        let diverged = report.manifest(s, Controller::RiccatiRotatedAlpha).failure.is_some();
        v.push(Claim::new(
            &format!("{}: rotated shape is worse than the synthesized one", scenario_name(s)),
            rot > good,
            format!("riccati {good:.4}, rotated {rot:.4}{}", if diverged { " (diverged)" } else { "" }),
        ));
    }

    let m = report.manifest(Scenario::RandomInit, Controller::None);
    let lambda2 = m.eigenvalues.get(1).map(|e| e.0.abs()).unwrap_or(f64::NAN);
    let rate = m.diagnostics.rate.unwrap_or(f64::NAN);
    v.push(Claim::new(
        "random init: uncontrolled rate matches |lambda2|",
        ((rate - lambda2) / lambda2).abs() <= RATE_TOL,
        format!("rate {rate:.4}, |lambda2| {lambda2:.4}"),
    ));

    let (_, cmp) = report.comparisons.iter().find(|c| c.0 == Scenario::RandomInit).expect("compared");
    let worst = same_decade(cmp, Controller::Riccati.name(), Controller::Lyapunov.name());
    v.push(Claim::new(
        "random init: riccati and lyapunov curves within one decade",
        worst.is_some_and(|w| w <= 1.0),
        format!("max |log10 ratio| in window {}", worst.map_or("n/a".into(), |w| format!("{w:.3}"))),
    ));
    v
}

/// Largest `|log10(a/b)|` over samples where both curves lie inside the
/// rate window. `None` when the window is never shared.
pub fn same_decade(cmp: &Comparison, a: &str, b: &str) -> Option<f64> {
    let col = |l: &str| cmp.columns.iter().find(|c| c.0 == l).map(|c| &c.1);
    let (ca, cb) = (col(a)?, col(b)?);
    let (lo, hi) = DEFAULT_WINDOW;
    let inside = |c: &[f64], i: usize| {
        let r = c[i] / c[0];
        r >= lo && r <= hi
    };
    (0..cmp.t.len())
        .filter(|&i| inside(ca, i) && inside(cb, i))
        .map(|i| (ca[i] / cb[i]).log10().abs())
        .fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
}
