use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aniso_stokes::diagnostics::{energy_audit, pressure_l2_audit};
use aniso_stokes::grid::{commutator_residual, div, grad, mollify};
use aniso_stokes::viscosity::{audit_hypotheses, random_smooth_velocity};
use aniso_stokes::{
    CoupledSolver, Forcing, GridSpec, MollifierKernel, ScalarField, SolverParams, VectorField, ViscosityTensor,
};

fn field_from(grid: GridSpec, coeffs: &[f64]) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| c * ((m + 1) as f64 * x[0] + m as f64 * x[1] + 0.3).sin())
            .sum::<f64>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_div_are_adjoint(a in prop::collection::vec(-1.0..1.0f64, 4), b in prop::collection::vec(-1.0..1.0f64, 4)) {
        let grid = GridSpec::cubic(2, 16).unwrap();
        let f = field_from(grid, &a);
        let v = VectorField::from_components(vec![field_from(grid, &b), field_from(grid, &a).map(|x| x * x)]).unwrap();
        let lhs = grad(&f).dot(&v);
        let rhs = -f.dot(&div(&v));
        prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn mollify_keeps_mean_and_does_not_expand(a in prop::collection::vec(-1.0..1.0f64, 5), delta in 0.05..0.8f64) {
        let grid = GridSpec::cubic(2, 32).unwrap();
        let f = field_from(grid, &a).map(|x| x + (3.0 * x).cos());
        let g = mollify(&f, &MollifierKernel::new(delta, &grid));
        prop_assert!((g.mean() - f.mean()).abs() <= 1e-13 * (1.0 + f.max_abs()));
        prop_assert!(g.max_abs() <= f.max_abs() * (1.0 + 1e-14));
    }
}

#[test]
fn commutator_residual_trivial_inputs() {
    let grid = GridSpec::cubic(2, 32).unwrap();
    let u = VectorField::from_fn(grid, |x| [x[1].sin(), (2.0 * x[0]).cos(), 0.0]);
    let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.3 * x[0].cos() * x[1].sin());
    assert!(commutator_residual(&ScalarField::constant(grid, 2.5), &u, 0.4) < 1e-12);
    let c = VectorField::from_fn(grid, |_| [0.7, -0.2, 0.0]);
    assert!(commutator_residual(&rho, &c, 0.4) < 1e-12);
}

#[test]
fn commutator_residual_is_first_order_and_monotone() {
    let grid = GridSpec::cubic(2, 128).unwrap();
    let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.3 * x[0].cos());
    let u = VectorField::from_fn(grid, |x| [x[1].sin(), 0.0, 0.0]);
    let r: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|&d| commutator_residual(&rho, &u, d)).collect();
    assert!(r[0] >= 2.0 * r[1], "{r:?}");
    assert!(r.windows(2).all(|w| w[1] <= 1.05 * w[0]), "{r:?}");
}

#[test]
fn quiescent_trajectory_has_zero_slack_and_known_pressure_norm() {
    let grid = GridSpec::cubic(3, 8).unwrap();
    let params = SolverParams { eps: 0.0, eta: 0.0, delta: 0.5, dt_max: 0.05, ..SolverParams::default() };
    let solver = CoupledSolver::new(ViscosityTensor::diag(&[1.0, 2.0, 3.0]).unwrap(), Forcing::Zero, params, grid).unwrap();
    let traj = solver.march(&ScalarField::constant(grid, 2.0), 0.5, 0.25).unwrap();
    assert!(energy_audit(&traj).iter().all(|s| s.abs() <= 1e-10));
    let volume = (2.0 * PI).powi(3);
    let expect = 4.0 * (0.5 * volume).sqrt();
    assert!((pressure_l2_audit(&traj) - expect).abs() <= 1e-10 * expect);
}

#[test]
fn drag_only_run_dissipates_energy() {
    let grid = GridSpec::cubic(1, 16).unwrap();
    let params = SolverParams { eps: 0.0, eta: 0.5, delta: 0.5, dt_max: 0.01, ..SolverParams::default() };
    let solver = CoupledSolver::new(ViscosityTensor::diag(&[1.0]).unwrap(), Forcing::Zero, params, grid).unwrap();
    let traj = solver.march(&ScalarField::constant(grid, 1.5), 0.2, 0.1).unwrap();
    assert!(energy_audit(&traj).iter().all(|s| *s >= -1e-12));
}

#[test]
fn h4_sample_norm_is_pinned() {
    let grid = GridSpec::cubic(3, 32).unwrap();
    let a = ViscosityTensor::diag(&[1.0, 1.0, 10.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24301);
    let samples: Vec<_> = (0..10).map(|_| random_smooth_velocity(&grid, &mut rng, 3)).collect();
    let report = audit_hypotheses(&a, 0.0, &samples).unwrap();
    let h4 = report.h4.expect("constant tensor");
    assert!(h4.symbol_invertible);
    // value of the first run, kept as a regression number
    let pinned = 4.98481140042607351e-1;
    assert!((h4.sample_norm - pinned).abs() <= 1e-9 * pinned, "sample norm {:.17e}", h4.sample_norm);
}

#[test]
fn one_dimensional_symbol_is_scalar() {
    let grid = GridSpec::cubic(1, 16).unwrap();
    let a = ViscosityTensor::diag(&[3.0]).unwrap();
    let op = aniso_stokes::StokesOperator::build(&a, &grid, 0.0).unwrap();
    for k in 1..8 {
        assert_eq!(op.symbol_at([k as f64, 0.0, 0.0]).unwrap()[0][0], 3.0 * (k * k) as f64);
    }
}
