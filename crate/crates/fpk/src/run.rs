//! One experiment end to end, written as a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use fpk_core::closed_loop::{ClosedLoopSpectrum, Diagnostics};
use fpk_core::integrate::OdeStats;
use fpk_core::shape::HautusReport;
use serde::{Deserialize, Serialize};

use crate::config::{Controller, ExperimentConfig, Scenario};
use crate::io;
use crate::pipeline::{self, all_passed, Certificate, Model, Solved};

pub const MANIFEST: &str = "manifest.json";
pub const TRAJECTORY: &str = "trajectory.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nx1: usize,
    pub nx2: usize,
    pub k: usize,
    pub h1: f64,
    pub h2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub cache_key: String,
    pub cache_hit: bool,
    pub grid: GridInfo,
    pub anchor: usize,
    pub eigenvalues: Vec<(f64, f64)>,
    pub delta: f64,
    pub delta_source: String,
    pub mu: Option<f64>,
    pub newton_history: Option<Vec<f64>>,
    pub hautus: Option<HautusReport>,
    pub hautus_reference: Option<HautusReport>,
    pub closed_loop: Option<ClosedLoopSpectrum>,
    pub initial_l2dev: f64,
    pub diagnostics: Diagnostics,
    pub integrator: OdeStats,
    pub failure: Option<String>,
    pub certificates: Vec<Certificate>,
    pub passed: bool,
    /// Modelling and numerical choices in effect for this run.
    pub decisions: Vec<String>,
    pub synthesis_seconds: f64,
    pub simulation_seconds: f64,
}

pub fn decisions(cfg: &ExperimentConfig, model: &Model) -> Vec<String> {
    let syn = &model.syn;
    let mut v = vec![
        "generator: upwind graph Markov generator, reflecting boundary".to_string(),
        format!("reduction anchor: node {} (largest stationary density)", model.asm.map.anchor()),
        "state weight: weighted L2 (M = w I)".to_string(),
        "feedback evaluated at every integrator stage".to_string(),
        "integrator: Bogacki-Shampine 2(3), cubic Hermite dense output".to_string(),
        format!("rate window: [{:e}, {:e}] of the initial deviation", fpk_core::closed_loop::DEFAULT_WINDOW.0, fpk_core::closed_loop::DEFAULT_WINDOW.1),
    ];
    match syn.controller {
        Controller::None => v.push("controller: none (u = 0)".into()),
        Controller::Riccati | Controller::RiccatiRotatedAlpha => {
            v.push(format!("shift: delta = {} ({})", syn.delta, syn.delta_source));
            v.push(format!("shape: elliptic solve with Riccati right-hand side over modes 2..={}", syn.d));
            if syn.controller == Controller::RiccatiRotatedAlpha {
                v.push("shape: rotated by a quarter turn about the domain center, rescaled to fit".into());
            }
            v.push("Riccati: Newton-Kleinman from a gain on the unstable left subspace".into());
            v.push("feedback: time-invariant -Bhat^T Pihat yhat on the unshifted system".into());
        }
        Controller::Lyapunov => {
            v.push("shape: elliptic solve with right-hand side psi2".into());
            v.push(format!("Lyapunov: Ahat^T X + X Ahat = -2 mu What, mu margin {}", cfg.control.mu_margin));
            v.push("closed-loop eigenvalue check uses Bhat = psi2 exactly".into());
        }
    }
    v.push(match cfg.simulation.scenario {
        Scenario::PointMass => "initial state: 1/w at the node nearest (1, 0)".into(),
        Scenario::RandomInit => format!("initial state: uniform noise, seed {}, unit mass", cfg.simulation.seed),
        Scenario::Custom => "initial state: user file, renormalized".into(),
    });
    v
}

pub struct RunResult {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

/// Runs `cfg` with an already prepared model and writes the run directory.
pub fn run_with_model(cfg: &ExperimentConfig, model: &Model, cache_hit: bool, dir: &Path) -> Result<RunResult> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rho0 = pipeline::initial_state(cfg, &model.asm.grid)?;
    let start = Instant::now();
    let sim = pipeline::run_simulation(cfg, model, &rho0)?;
    let simulation_seconds = start.elapsed().as_secs_f64();

    io::write_trajectory_csv(&dir.join(TRAJECTORY), &sim.record)?;
    io::write_spectrum_csv(&dir.join("spectrum.csv"), &model.syn.spectrum)?;
    io::write_field_csv(&dir.join("alpha.csv"), &model.asm.grid, &model.syn.alpha)?;
    io::write_field_csv(&dir.join("rho_inf.csv"), &model.asm.grid, model.asm.rho.values())?;
    if !sim.snapshots.is_empty() {
        let sd = dir.join("snapshots");
        fs::create_dir_all(&sd)?;
        for (t, rho) in &sim.snapshots {
            io::write_field_csv(&sd.join(format!("rho_t{t:.4}.csv")), &model.asm.grid, rho)?;
        }
    }
    fs::write(dir.join("config.toml"), cfg.to_toml())?;

    let mut certs = model.asm.generator_checks();
    certs.extend(model.syn.certificates.iter().cloned());
    certs.extend(sim.certificates);
    let g = &model.asm.grid;
    let (mu, closed_loop, history) = match &model.syn.solved {
        Solved::None => (None, None, None),
        Solved::Riccati(s) => (None, None, Some(s.history.clone())),
        Solved::Lyapunov { mu, closed_loop, .. } => (Some(mu.mu), closed_loop.clone(), None),
    };
    let manifest = Manifest {
        config: cfg.clone(),
        cache_key: crate::cache::key(cfg),
        cache_hit,
        grid: GridInfo { nx1: g.nx1(), nx2: g.nx2(), k: g.k(), h1: g.h1(), h2: g.h2() },
        anchor: model.asm.map.anchor(),
        eigenvalues: model.syn.spectrum.pairs.iter().map(|p| (p.re, p.im)).collect(),
        delta: model.syn.delta,
        delta_source: model.syn.delta_source.clone(),
        mu,
        newton_history: history,
        hautus: model.syn.margins.clone(),
        hautus_reference: model.syn.reference_margins.clone(),
        closed_loop,
        initial_l2dev: sim.record.l2dev.first().copied().unwrap_or(0.0),
        diagnostics: sim.diagnostics,
        integrator: sim.record.stats,
        failure: sim.record.failure.clone(),
        passed: all_passed(&certs),
        certificates: certs,
        decisions: decisions(cfg, model),
        synthesis_seconds: model.syn.seconds,
        simulation_seconds,
    };
    write_manifest(&dir.join(MANIFEST), &manifest)?;
    Ok(RunResult { manifest, dir: dir.to_path_buf() })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (model, hit) = pipeline::prepare(cfg)?;
    run_with_model(cfg, &model, hit, &cfg.output.dir)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
