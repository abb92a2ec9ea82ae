use fpk_core::closed_loop::*;
use fpk_core::grid::h1_gram;
use fpk_core::operators::*;
use fpk_core::projection::*;
use fpk_core::shape::{elliptic_operator, lyapunov_rhs, solve_shape};
use fpk_core::spectral::{choose_mu, leading_eigenpairs, SpectralData};
use fpk_core::{Grid2D, LinOp, PotentialSpec, Rect, ScalarField};

struct Lyap {
    grid: Grid2D,
    a: LinOp,
    n: LinOp,
    rho: ScalarField,
    spec: SpectralData,
    sys: ReducedSystem,
    mu: f64,
}

fn lyapunov_setup(n1: usize, n2: usize) -> Lyap {
    let grid = Grid2D::new(n1, n2, Rect::new(-1.5, 1.5, -1.0, 1.0)).unwrap();
    let a = generator_from_adjoint(&assemble_adjoint_generator(&PotentialSpec::double_well(), &grid)).unwrap();
    let rho = discrete_stationary(&a).unwrap();
    let spec = leading_eigenpairs(&a, 4).unwrap();
    let psi2 = spec.psi(2).unwrap();
    let c = elliptic_operator(&rho, &grid).unwrap();
    let alpha = solve_shape(&c, &lyapunov_rhs(&psi2).unwrap()).unwrap().alpha;
    let n = assemble_control_operator(&alpha, &grid).unwrap();
    let b = control_vector(&n, &rho).unwrap();
    let map = build_r(&rho).unwrap();
    let sys = reduce_system(&a, &b, &StateWeight::default(), &map, 0.0).unwrap();
    let mu = choose_mu(&a, &h1_gram(&grid), 0.1, 0).unwrap().mu;
    Lyap { grid, a, n, rho, spec, sys, mu }
}

#[test]
fn equilibrium_stays_put() {
    let s = lyapunov_setup(12, 8);
    let x = solve_upsilon(&s.sys, s.mu).unwrap();
    let law = FeedbackLaw::lyapunov(&s.sys, &x.x, &s.n).unwrap();
    let zero = vec![0.0; s.rho.len()];
    assert_eq!(law.control(&zero), 0.0);
    // the kernel direction is invisible to the feedback
    let along: Vec<f64> = s.rho.values().iter().map(|r| 0.3 * r).collect();
    assert!(law.control(&along).abs() < 1e-12);
    let rec = simulate(&s.a, &s.n, &s.rho, &s.rho, &FeedbackLaw::None, &sample_times(1.0, 11), 1e-8).unwrap();
    assert!(rec.l2dev.iter().all(|&v| v <= 1e-8));
}

#[test]
fn lyapunov_gain_along_psi2() {
    let s = lyapunov_setup(16, 12);
    let x = solve_upsilon(&s.sys, s.mu).unwrap();
    let law = FeedbackLaw::lyapunov(&s.sys, &x.x, &s.n).unwrap();
    let psi2 = s.spec.psi(2).unwrap();
    let bh = &s.sys.bhat;
    let psih = nalgebra::DVector::from_vec(s.sys.map.restrict(psi2.values()));
    let wh = s.sys.mass_gram();
    // leading order: u = -eps <B, psi2 + Upsilon psi2>
    let expect = -(bh.dot(&(&wh * &psih)) + bh.dot(&(&x.x * &psih)));
    for eps in [1e-4, 1e-5] {
        let y: Vec<f64> = psi2.values().iter().map(|v| eps * v).collect();
        let u = law.control(&y) / eps;
        assert!((u - expect).abs() <= 1e2 * eps * expect.abs(), "{u} {expect}");
    }
    let quad = psih.dot(&(&x.x * &psih)) / psih.dot(&(&wh * &psih));
    assert!((quad + s.mu / s.spec.lambda(2)).abs() <= 1e-8 * quad.abs());
}

#[test]
fn closed_loop_second_eigenvalue_formula() {
    let mut s = lyapunov_setup(16, 12);
    // the prediction assumes the control vector is exactly psi2
    let psi2 = s.spec.psi(2).unwrap();
    s.sys.bhat = nalgebra::DVector::from_vec(s.sys.map.restrict(psi2.values()));
    let x = solve_upsilon(&s.sys, s.mu).unwrap();
    let rep = closed_loop_spectrum(&s.sys, &x.x, s.mu, s.spec.lambda(2)).unwrap();
    assert!(!rep.degenerate);
    assert!(rep.formula_error <= 1e-6, "{rep:?}");
    assert!(rep.max_drift <= 1e-6, "{rep:?}");
    assert!(rep.lambda2_tilde < rep.lambda2);
}

#[test]
fn lyapunov_value_decreases_from_point_mass() {
    let s = lyapunov_setup(16, 12);
    let x = solve_upsilon(&s.sys, s.mu).unwrap();
    let law = FeedbackLaw::lyapunov(&s.sys, &x.x, &s.n).unwrap();
    let tol = 1e-8;
    let pm = point_mass(&s.grid, 1.0, 0.0);
    let rec = simulate(&s.a, &s.n, &s.rho, &pm, &law, &sample_times(2.0, 401), tol).unwrap();
    let d = diagnostics(&rec, DEFAULT_WINDOW);
    let v0 = rec.v.as_ref().unwrap()[0];
    assert!(d.max_v_increase.unwrap() <= 10.0 * tol * v0, "{d:?}");
    assert!(d.max_mass_drift <= 1e-10);
}

#[test]
fn uncontrolled_rate_is_lambda2() {
    let s = lyapunov_setup(16, 12);
    let r0 = random_state(&s.grid, 7);
    let rec = simulate(&s.a, &s.n, &s.rho, &r0, &FeedbackLaw::None, &sample_times(40.0, 801), 1e-9).unwrap();
    let d = diagnostics(&rec, DEFAULT_WINDOW);
    let l2 = s.spec.lambda(2).abs();
    assert!((d.rate.unwrap() - l2).abs() <= 0.1 * l2, "{d:?} {l2}");
    assert!(d.min_rho >= -1e-8);
    assert!(d.max_mass_drift <= 1e-10);
}

#[test]
fn partial_run_keeps_samples() {
    let s = lyapunov_setup(8, 6);
    // an absurd gain drives the bilinear system to blow up
    let map = s.sys.map.clone();
    let gain = -1e4 * &s.sys.bhat;
    let law = FeedbackLaw::Riccati { gain, map };
    let pm = point_mass(&s.grid, 1.0, 0.0);
    let times = sample_times(1.0, 101);
    let rec = simulate_partial(&s.a, &s.n, &s.rho, &pm, &law, &times, RunOptions::with_tol(1e-8), |_, _| {}).unwrap();
    assert!(rec.failure.is_some());
    assert!(rec.len() < times.len());
    assert!(simulate(&s.a, &s.n, &s.rho, &pm, &law, &times, 1e-8).is_err());
}

#[test]
fn early_stop() {
    let s = lyapunov_setup(8, 6);
    let r0 = random_state(&s.grid, 1);
    let opts = RunOptions { tol: 1e-9, stop_below: Some(0.5) };
    let rec = simulate_partial(&s.a, &s.n, &s.rho, &r0, &FeedbackLaw::None, &sample_times(50.0, 501), opts, |_, _| {}).unwrap();
    assert!(rec.failure.is_none());
    assert!(rec.len() < 501);
    let last = *rec.l2dev.last().unwrap();
    assert!(last <= 0.5 * rec.l2dev[0] && rec.l2dev[rec.len() - 2] > 0.5 * rec.l2dev[0]);
}
