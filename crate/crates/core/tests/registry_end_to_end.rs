use bsmp_core::adjoint::solve_adjoint;
use bsmp_core::bsde::{BsdeSolver, ControlProcess, SolverOptions};
use bsmp_core::registry::{self, inverse_sqrt_abs_moment};
use bsmp_core::sampling::{sample_ensemble, PathEnsemble, TimeGrid};
use bsmp_core::smp::{augmented_cost, evaluate_cost_direct, initial_state_estimate};
use bsmp_core::stats::ROUNDOFF_FLOOR;
use serde_json::{Map, Value};

fn ensemble(paths: usize, steps: usize, seed: u64) -> PathEnsemble {
    sample_ensemble(&TimeGrid::new(1.0, steps).unwrap(), 1, paths, seed, false).unwrap()
}

#[test]
fn every_registered_model_solves_with_matching_cost_estimators() {
    let ens = ensemble(2_000, 20, 3);
    for key in registry::keys() {
        let model = registry::build(key, &Map::new(), 1.0).unwrap();
        let spec = &model.spec;
        let solver = BsdeSolver::new(spec, &ens, SolverOptions::default()).unwrap();
        let u =
            ControlProcess::constant(&ens, &spec.control_set.anchor(), &spec.control_set).unwrap();
        let bundle = solver.solve(&u).unwrap();
        let adjoint = solve_adjoint(spec, &ens, &bundle).unwrap();
        assert!(
            bundle.y.is_finite() && bundle.z.is_finite() && adjoint.p.is_finite(),
            "{key}"
        );
        let direct = evaluate_cost_direct(spec, &ens, &bundle).unwrap();
        let aug = augmented_cost(&solver, &bundle, 0.0).unwrap();
        let se = direct.estimate().combined_stderr(&aug.estimate());
        assert!(
            (direct.j - aug.j).abs() <= 5.0 * se + ROUNDOFF_FLOOR,
            "{key}: {direct:?} {aug:?}"
        );
    }
}

#[test]
fn control_free_oracles_hold_for_any_control() {
    let ens = ensemble(10_000, 50, 7);
    for key in ["zero_driver", "heavy_tail", "linear_driver"] {
        let model = registry::build(key, &Map::new(), 1.0).unwrap();
        assert!(model.oracle.y0_control_free);
        let spec = &model.spec;
        let target = model.oracle.optimal_y0.unwrap();
        for c in [-1.0, 0.0, 0.7] {
            let u = ControlProcess::constant(&ens, &[c], &spec.control_set).unwrap();
            let bundle = BsdeSolver::new(spec, &ens, SolverOptions::default())
                .unwrap()
                .solve(&u)
                .unwrap();
            let e = initial_state_estimate(spec, &ens, &bundle).unwrap()[0];
            let tol = 5.0 * e.stderr + model.oracle.time_step_rtol * target.abs() + ROUNDOFF_FLOOR;
            assert!(
                (e.value - target).abs() <= tol,
                "{key} c={c}: {e:?} vs {target}"
            );
        }
    }
}

#[test]
fn heavy_tail_initial_value_matches_quadrature() {
    let ens = ensemble(10_000, 25, 11);
    let model = registry::build("heavy_tail", &Map::new(), 1.0).unwrap();
    let u = ControlProcess::constant(&ens, &[0.0], &model.spec.control_set).unwrap();
    let bundle = BsdeSolver::new(&model.spec, &ens, SolverOptions::default())
        .unwrap()
        .solve(&u)
        .unwrap();
    let e = initial_state_estimate(&model.spec, &ens, &bundle).unwrap()[0];
    assert!(
        (e.value - inverse_sqrt_abs_moment(1.0)).abs() <= 5.0 * e.stderr,
        "{e:?}"
    );
    assert!(bundle.y.is_finite());
}

#[test]
fn trajectory_oracles_match_the_solver() {
    let ens = ensemble(10_000, 50, 5);
    for terminal in ["constant", "brownian", "square"] {
        let mut p = Map::new();
        p.insert("terminal".into(), Value::from(terminal));
        let model = registry::build("zero_driver", &p, 1.0).unwrap();
        let oracle = model.oracle.trajectory.unwrap();
        let u = ControlProcess::constant(&ens, &[0.0], &model.spec.control_set).unwrap();
        let bundle = BsdeSolver::new(&model.spec, &ens, SolverOptions::default())
            .unwrap()
            .solve(&u)
            .unwrap();
        let mut sq = 0.0;
        for k in 0..ens.path_count() {
            for i in 0..=ens.steps() {
                let (y, _) = oracle.eval(ens.grid().t(i), 1.0, ens.w(k, i)[0]);
                sq += (bundle.y.at(i, k)[0] - y).powi(2);
            }
        }
        let rms = (sq / (ens.path_count() * (ens.steps() + 1)) as f64).sqrt();
        assert!(rms <= 0.05, "{terminal}: rms {rms}");
    }
}

#[test]
fn doubled_ensemble_extends_the_base_ensemble() {
    let small = ensemble(500, 10, 9);
    let big = ensemble(1_000, 10, 9);
    for k in 0..500 {
        assert_eq!(small.path(k), big.path(k));
    }
}
