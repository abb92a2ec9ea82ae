use fpk_core::operators::*;
use fpk_core::potential::phi_field;
use fpk_core::projection::{build_r, projector_p, reduce_system, StateWeight};
use fpk_core::riccati::*;
use fpk_core::shape::{elliptic_operator, riccati_rhs, solve_shape};
use fpk_core::spectral::{choose_delta, leading_eigenpairs};
use fpk_core::{Grid2D, PotentialSpec, Rect};
use nalgebra::DVector;

#[test]
fn small_grid_two_modes() {
    let grid = Grid2D::new(8, 6, Rect::new(-1.5, 1.5, -1.0, 1.0)).unwrap();
    let pspec = PotentialSpec::double_well();
    let a = generator_from_adjoint(&assemble_adjoint_generator(&pspec, &grid)).unwrap();
    let rho = discrete_stationary(&a).unwrap();
    let spec = leading_eigenpairs(&a, 4).unwrap();
    let d = 2;
    let delta = choose_delta(&spec, d).unwrap();
    let p = projector_p(&rho).unwrap();
    let rhs = riccati_rhs(&spec, d, &phi_field(&pspec, &grid), &p).unwrap();
    let alpha = solve_shape(&elliptic_operator(&rho, &grid).unwrap(), &rhs.rhs).unwrap().alpha;
    let b = control_vector(&assemble_control_operator(&alpha, &grid).unwrap(), &rho).unwrap();
    let map = build_r(&rho).unwrap();
    let sys = reduce_system(&a, &b, &StateWeight::default(), &map, delta).unwrap();

    let sol = solve_care(&sys).unwrap();
    assert!(sol.iterations <= 12, "{:?}", sol.history);
    assert!(sol.residual <= 1e-8);
    assert!(!sol.unstable.is_empty());
    let sign = solve_care_sign(&sys.shifted(), &sys.bhat, &sys.mhat).unwrap();
    assert!((&sign - &sol.pihat).norm() <= 1e-8 * sign.norm());

    let pi = lift_riccati(&sol.pihat, &map);
    let rv = DVector::from_column_slice(rho.values());
    assert!((&pi * &rv).norm() <= 1e-12 * pi.norm());
    assert!((&pi - pi.transpose()).norm() <= 1e-14 * pi.norm());
    assert!((reduce_riccati(&pi, &map) - &sol.pihat).norm() <= 1e-12 * pi.norm());
    let full = full_riccati_residual(&pi, &a, b.values(), &map, delta, 1.0);
    assert!(full <= 1e-8, "{full}");

    // the reduced feedback equals the full one on lifted states
    let yhat: Vec<f64> = (0..map.n()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.1).collect();
    let y = DVector::from_vec(map.lift(&yhat));
    let full_u = DVector::from_column_slice(b.values()).dot(&(&pi * y));
    let red_u = sys.bhat.dot(&(&sol.pihat * DVector::from_vec(yhat)));
    assert!((full_u - red_u).abs() <= 1e-12 * full_u.abs().max(1.0));
}
