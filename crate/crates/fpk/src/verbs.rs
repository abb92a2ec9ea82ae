//! The individual pipeline stages behind the CLI verbs. Each writes its
//! artifacts into `cfg.output.dir` and returns the certificates it produced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use crate::compare::{compare_runs, write_comparison, RunSummary};
use crate::config::{Controller, ExperimentConfig};
use crate::io;
use crate::pipeline::{self, Certificate, Solved};
use crate::run::run_experiment;

pub const CERTIFICATES: &str = "certificates.json";

pub struct Outcome {
    pub certificates: Vec<Certificate>,
    /// Short `key: value` lines for the terminal.
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        pipeline::all_passed(&self.certificates)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn finish(dir: &Path, certificates: Vec<Certificate>, summary: Vec<String>) -> Result<Outcome> {
    write_json(&dir.join(CERTIFICATES), &certificates)?;
    Ok(Outcome { certificates, summary })
}

pub fn assemble(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let asm = pipeline::assemble(cfg)?;
    io::write_matrix_market(&dir.join("A.mtx"), &asm.a)?;
    io::write_field_csv(&dir.join("rho_inf.csv"), &asm.grid, asm.rho.values())?;
    let summary = vec![
        format!("nodes: {}", asm.grid.k()),
        format!("nonzeros: {}", asm.a.matrix().nnz()),
        format!("anchor: {}", asm.map.anchor()),
    ];
    finish(&dir, asm.generator_checks(), summary)
}

pub fn spectrum(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let asm = pipeline::assemble(cfg)?;
    let spec = pipeline::spectrum(&asm, cfg.control.d)?;
    io::write_spectrum_csv(&dir.join("spectrum.csv"), &spec)?;
    let delta = fpk_core::spectral::choose_delta(&spec, cfg.control.d)?;
    let mut summary: Vec<String> =
        spec.pairs.iter().enumerate().map(|(i, p)| format!("lambda_{}: {:.6} {:+.2e}i", i + 1, p.re, p.im)).collect();
    summary.push(format!("delta (d = {}): {delta:.6}", cfg.control.d));
    let certs =
        vec![Certificate::max("eigenpair residual", spec.max_residual(), fpk_core::spectral::RESIDUAL_TOL)];
    finish(&dir, certs, summary)
}

pub fn shape(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let asm = pipeline::assemble(cfg)?;
    let st = pipeline::shape_stage(cfg, &asm)?;
    io::write_field_csv(&dir.join("alpha.csv"), &asm.grid, st.shape.alpha.values())?;
    io::write_field_csv(&dir.join("b.csv"), &asm.grid, st.act.b.values())?;
    write_json(&dir.join("hautus.json"), &(&st.margins, &st.reference_margins))?;
    let mut summary = vec![format!("shape residual: {:.3e}", st.shape.residual)];
    if let Some(m) = &st.margins {
        for e in &m.margins {
            summary.push(format!("margin mode {}: {:.3e}", e.index, e.margin));
        }
    }
    finish(&dir, st.certificates, summary)
}

pub fn solve_riccati(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if !cfg.control.controller.is_riccati() {
        cfg.control.controller = Controller::Riccati;
    }
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let (model, hit) = pipeline::prepare(&cfg)?;
    let Solved::Riccati(sol) = &model.syn.solved else { bail!("stage riccati: no Riccati solution") };
    io::write_vector_csv(&dir.join("gain.csv"), "gain", sol.gain.as_slice())?;
    io::write_vector_csv(&dir.join("newton_history.csv"), "residual", &sol.history)?;
    io::write_field_csv(&dir.join("alpha.csv"), &model.asm.grid, &model.syn.alpha)?;
    let summary = vec![
        format!("delta: {:.6} ({})", model.syn.delta, model.syn.delta_source),
        format!("newton steps: {}", sol.iterations),
        format!("residual: {:.3e}", sol.residual),
        format!("gain norm: {:.4e}", sol.gain.norm()),
        format!("cache hit: {hit}"),
    ];
    let mut certs = model.asm.generator_checks();
    certs.extend(model.syn.certificates.iter().cloned());
    finish(&dir, certs, summary)
}

pub fn solve_lyapunov(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.control.controller = Controller::Lyapunov;
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let (model, hit) = pipeline::prepare(&cfg)?;
    let Solved::Lyapunov { mu, upsilon, closed_loop } = &model.syn.solved else {
        bail!("stage lyapunov: no Lyapunov solution")
    };
    io::write_field_csv(&dir.join("alpha.csv"), &model.asm.grid, &model.syn.alpha)?;
    write_json(&dir.join("closed_loop.json"), closed_loop)?;
    let mut summary = vec![
        format!("mu: {:.6}", mu.mu),
        format!("residual: {:.3e}", upsilon.residual),
        format!("cache hit: {hit}"),
    ];
    if let Some(cl) = closed_loop {
        summary.push(format!("lambda2: {:.6} -> {:.6} (formula {:.6})", cl.lambda2, cl.lambda2_tilde, cl.formula));
    }
    let mut certs = model.asm.generator_checks();
    certs.extend(model.syn.certificates.iter().cloned());
    finish(&dir, certs, summary)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = run_experiment(cfg)?;
    let m = &r.manifest;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut summary = vec![
        format!("run: {}", r.dir.display()),
        format!("rate: {}", opt(m.diagnostics.rate)),
        format!("time to 1%: {}", opt(m.diagnostics.time_to_1pct)),
        format!("steps: {} accepted, {} rejected", m.integrator.accepted, m.integrator.rejected),
    ];
    if let Some(f) = &m.failure {
        summary.push(format!("integration stopped: {f}"));
    }
    Ok(Outcome { certificates: m.certificates.clone(), summary })
}

pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<Outcome> {
    let runs = dirs.iter().map(|d| RunSummary::load(d)).collect::<Result<Vec<_>>>()?;
    let cmp = compare_runs(&runs)?;
    write_comparison(out, &cmp)?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let summary = cmp
        .metrics
        .iter()
        .map(|m| {
            let div = if m.diverged { " (diverged)" } else { "" };
            format!("{}: rate {}, time to 1% {}{div}", m.label, opt(m.rate), opt(m.time_to_1pct))
        })
        .collect();
    Ok(Outcome { certificates: Vec::new(), summary })
}

pub fn reproduce_paper(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let report = crate::scenarios::run_matrix(cfg, &dir)?;
    let mut certs = Vec::new();
    let mut summary = Vec::new();
    for (s, c, d, m) in &report.runs {
        let failed = m.certificates.iter().filter(|c| c.enforced && !c.passed()).count();
        summary.push(format!("{s:?}/{}: {} ({failed} failed certificates)", c.name(), d.display()));
        certs.extend(m.certificates.iter().map(|x| Certificate { name: format!("{}: {}", c.name(), x.name), ..x.clone() }));
    }
    for c in &report.claims {
        summary.push(format!("[{}] {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail));
        certs.push(Certificate::min(&c.name, c.passed as u8 as f64, 1.0));
    }
    finish(&dir, certs, summary)
}
