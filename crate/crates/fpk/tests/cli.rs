use std::path::Path;
use std::process::Command;

fn fpk(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fpk"))
        .args(args)
        .args(["--nx1", "12", "--nx2", "8", "--t-end", "2", "--samples", "101"])
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn every_stage_verb_passes() {
    let tmp = tempfile::tempdir().unwrap();
    for (verb, file) in [
        ("assemble", "A.mtx"),
        ("spectrum", "spectrum.csv"),
        ("shape", "alpha.csv"),
        ("solve-riccati", "gain.csv"),
        ("solve-lyapunov", "closed_loop.json"),
    ] {
        let dir = tmp.path().join(verb);
        let out = fpk(&dir, &[verb]);
        assert!(out.status.success(), "{verb}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.join(file).exists(), "{verb} wrote no {file}");
        assert!(dir.join("certificates.json").exists());
    }
}

#[test]
fn simulate_then_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let out = fpk(d, &["simulate", "--controller", "lyapunov", "--scenario", "random_init", "--seed", "3"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["trajectory.csv", "manifest.json", "spectrum.csv", "alpha.csv", "rho_inf.csv", "config.toml"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    // same seed and config, same bytes
    let read = |p: &Path| std::fs::read(p.join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));

    let cmp = tmp.path().join("cmp");
    let out = Command::new(env!("CARGO_BIN_EXE_fpk"))
        .arg("compare")
        .args([&a, &b])
        .arg("--out")
        .arg(&cmp)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(cmp.join("comparison.csv")).unwrap();
    for row in r.records() {
        let row = row.unwrap();
        assert_eq!(row.get(1), row.get(2));
    }
}

#[test]
fn compare_rejects_mismatched_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(fpk(&a, &["simulate", "--controller", "none", "--scenario", "point_mass"]).status.success());
    assert!(fpk(&b, &["simulate", "--controller", "none", "--scenario", "random_init"]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_fpk"))
        .arg("compare")
        .args([&a, &b])
        .arg("--out")
        .arg(tmp.path().join("cmp"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different scenarios"));
}

#[test]
fn bad_config_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpk(tmp.path(), &["assemble", "--nu=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu must be positive"));
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(&cfg, "[model]\nnu = 0.5\n[control]\ncontroller = \"none\"\n").unwrap();
    let dir = tmp.path().join("run");
    let out = fpk(&dir, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let m = fpk::run::read_manifest(&dir).unwrap();
    assert_eq!(m.config.model.nu, 0.5);
    assert_eq!(m.config.grid.nx1, 12);
    assert_eq!(m.config.control.controller, fpk::config::Controller::None);
}
