use std::time::Instant;

use fpk::config::{Controller, ExperimentConfig, Scenario};
use fpk::pipeline::prepare;
use fpk::run::run_with_model;

fn small(controller: Controller) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.grid.nx1 = 12;
    c.grid.nx2 = 8;
    c.control.controller = controller;
    c.simulation.t_end = 2.0;
    c.simulation.samples = 101;
    c
}

#[test]
fn desk_bundles_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for controller in [Controller::None, Controller::Riccati, Controller::Lyapunov, Controller::RiccatiRotatedAlpha] {
        let cfg = small(controller);
        let (model, _) = prepare(&cfg).unwrap();
        let r = run_with_model(&cfg, &model, false, &tmp.path().join(controller.name())).unwrap();
        let failed: Vec<_> = r.manifest.certificates.iter().filter(|c| c.enforced && !c.passed()).collect();
        assert!(failed.is_empty(), "{}: {failed:?}", controller.name());
        assert!(!r.manifest.decisions.is_empty());
    }
}

#[test]
fn equilibrium_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Controller::None);
    let (model, _) = prepare(&cfg).unwrap();
    let rho = tmp.path().join("rho.csv");
    fpk::io::write_field_csv(&rho, &model.asm.grid, model.asm.rho.values()).unwrap();
    cfg.simulation.scenario = Scenario::Custom;
    cfg.simulation.initial = Some(rho);
    let r = run_with_model(&cfg, &model, false, &tmp.path().join("run")).unwrap();
    let traj = fpk::io::read_trajectory_csv(&tmp.path().join("run/trajectory.csv")).unwrap();
    let worst = traj.l2dev.iter().copied().fold(0.0, f64::max);
    // an explicit integrator on a stiff system wanders at the atol level
    assert!(worst <= 10.0 * cfg.simulation.tol, "{worst:e}");
    assert!(r.manifest.passed);
}

#[test]
fn cache_hit_is_fast_and_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Controller::Riccati);
    cfg.grid.nx1 = 24;
    cfg.grid.nx2 = 16;
    cfg.output.cache = Some(tmp.path().join("cache"));

    let t = Instant::now();
    let (cold, hit) = prepare(&cfg).unwrap();
    let cold_s = t.elapsed().as_secs_f64();
    assert!(!hit);
    let t = Instant::now();
    let (warm, hit) = prepare(&cfg).unwrap();
    let warm_s = t.elapsed().as_secs_f64();
    assert!(hit);
    assert!(cold_s >= 10.0 * warm_s, "cold {cold_s:.3}s, warm {warm_s:.3}s");
    assert_eq!(cold.syn, warm.syn);

    run_with_model(&cfg, &cold, false, &tmp.path().join("cold")).unwrap();
    run_with_model(&cfg, &warm, true, &tmp.path().join("warm")).unwrap();
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("trajectory.csv")).unwrap();
    assert_eq!(read("cold"), read("warm"));

    // cleared cache recomputes the same thing
    fpk::cache::Cache::new(tmp.path().join("cache")).clear().unwrap();
    let (again, hit) = prepare(&cfg).unwrap();
    assert!(!hit);
    assert_eq!(again.syn.solved, cold.syn.solved);
    assert_eq!(again.syn.alpha, cold.syn.alpha);
}

#[test]
fn corrupt_cache_entry_recomputes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Controller::Lyapunov);
    let dir = tmp.path().join("cache");
    cfg.output.cache = Some(dir.clone());
    let (first, _) = prepare(&cfg).unwrap();
    for e in std::fs::read_dir(&dir).unwrap() {
        std::fs::write(e.unwrap().path(), b"garbage").unwrap();
    }
    let (second, hit) = prepare(&cfg).unwrap();
    assert!(!hit);
    assert_eq!(first.syn.solved, second.syn.solved);
}

#[test]
fn reproduce_paper_small() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(Controller::Riccati);
    cfg.simulation.t_end = 15.0;
    cfg.simulation.samples = 751;
    cfg.simulation.stop_below = Some(1e-7);
    let report = fpk::scenarios::run_matrix(&cfg, tmp.path()).unwrap();
    assert_eq!(report.runs.len(), 8);
    for s in ["random_init", "point_mass"] {
        assert!(tmp.path().join(s).join("comparison.csv").exists());
        assert!(tmp.path().join(s).join("metrics.csv").exists());
    }
    assert!(tmp.path().join("claims.json").exists());
    for c in &report.claims {
        println!("{} {}: {}", c.passed, c.name, c.detail);
    }
    let speedups = report.claims.iter().filter(|c| c.name.contains("sooner"));
    assert!(speedups.clone().count() == 2 && speedups.into_iter().all(|c| c.passed));
}
