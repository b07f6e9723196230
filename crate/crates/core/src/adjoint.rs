//! Hamiltonian `H = p.b - h` and the forward adjoint equation
//! `p_{i+1} = p_i - H_y dt - H_z dW`, `p_0 = g_y(y_0)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::array::StepArray;
use crate::bsde::TrajectoryBundle;
use crate::model::{central_difference, CostGrad, Dimensions, DriverGrad, ProblemSpec};
use crate::sampling::{EnsembleId, PathEnsemble};
use crate::stats::Estimate;
use crate::{par, Error, Result};

/// Value and partials of the Hamiltonian at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianEval {
    pub value: f64,
    pub hy: Vec<f64>,
    /// `n x d`, row-major like `z`.
    pub hz: Vec<f64>,
    pub hv: Vec<f64>,
}

/// Reusable buffers for repeated Hamiltonian evaluations.
#[derive(Clone, Debug)]
pub struct HamiltonianWork {
    dims: Dimensions,
    dg: DriverGrad,
    cg: CostGrad,
    b: Vec<f64>,
    eval: HamiltonianEval,
}

impl HamiltonianWork {
    pub fn new(dims: Dimensions) -> Self {
        Self {
            dims,
            dg: DriverGrad::zeros(dims),
            cg: CostGrad::zeros(dims),
            b: vec![0.0; dims.n],
            eval: HamiltonianEval {
                value: 0.0,
                hy: vec![0.0; dims.n],
                hz: vec![0.0; dims.z_len()],
                hv: vec![0.0; dims.m],
            },
        }
    }

    pub fn eval(
        &mut self,
        spec: &ProblemSpec,
        t: f64,
        y: &[f64],
        z: &[f64],
        v: &[f64],
        p: &[f64],
    ) -> &HamiltonianEval {
        let Dimensions { n, d, m } = self.dims;
        let model = spec.model.as_ref();
        self.dg.clear();
        self.cg.clear();
        model.driver(t, y, z, v, &mut self.b);
        model.driver_grad(t, y, z, v, &mut self.dg);
        model.running_cost_grad(t, y, z, v, &mut self.cg);
        let h = model.running_cost(t, y, z, v);
        let e = &mut self.eval;
        e.value = dot(p, &self.b) - h;
        for c in 0..n {
            e.hy[c] = (0..n).map(|a| self.dg.by[a * n + c] * p[a]).sum::<f64>() - self.cg.hy[c];
            for j in 0..d {
                e.hz[c * d + j] = (0..n)
                    .map(|a| self.dg.bz[j * n * n + a * n + c] * p[a])
                    .sum::<f64>()
                    - self.cg.hz[c * d + j];
            }
        }
        for c in 0..m {
            e.hv[c] = (0..n).map(|a| self.dg.bv[a * m + c] * p[a]).sum::<f64>() - self.cg.hv[c];
        }
        &self.eval
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn hamiltonian(
    spec: &ProblemSpec,
    t: f64,
    y: &[f64],
    z: &[f64],
    v: &[f64],
    p: &[f64],
) -> Result<HamiltonianEval> {
    let dims = spec.dims;
    if y.len() != dims.n || z.len() != dims.z_len() || v.len() != dims.m || p.len() != dims.n {
        return Err(Error::Shape(
            "hamiltonian arguments do not match dimensions".into(),
        ));
    }
    let mut work = HamiltonianWork::new(dims);
    let e = work.eval(spec, t, y, z, v, p).clone();
    if !e.value.is_finite() {
        return Err(Error::NonFinite {
            quantity: "hamiltonian",
            step: 0,
        });
    }
    Ok(e)
}

/// Largest `|analytic - fd| / (1 + |analytic|)` over `H_y`, `H_z`, `H_v` at
/// `points` random points of a box (controls projected onto the control set).
pub fn hamiltonian_grad_check(spec: &ProblemSpec, points: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const RADIUS: f64 = 2.0;
    let dims = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-RADIUS..RADIUS)).collect() };
    let mut worst = 0.0f64;
    for _ in 0..points {
        let t = draw(1)[0].abs() / RADIUS * spec.horizon;
        let y = draw(dims.n);
        let z = draw(dims.z_len());
        let v = spec.control_set.project(&draw(dims.m));
        let p = draw(dims.n);
        let analytic = hamiltonian(spec, t, &y, &z, &v, &p)?;
        let mut work = HamiltonianWork::new(dims);
        let mut compare = |a: f64, fd: f64| -> Result<()> {
            if !fd.is_finite() {
                return Err(Error::GradCheck {
                    function: "hamiltonian",
                });
            }
            worst = worst.max((a - fd).abs() / (1.0 + a.abs()));
            Ok(())
        };
        for c in 0..dims.n {
            let fd = central_difference(&y, c, STEP, |yy| work.eval(spec, t, yy, &z, &v, &p).value);
            compare(analytic.hy[c], fd)?;
        }
        for c in 0..dims.z_len() {
            let fd = central_difference(&z, c, STEP, |zz| work.eval(spec, t, &y, zz, &v, &p).value);
            compare(analytic.hz[c], fd)?;
        }
        for c in 0..dims.m {
            let fd = central_difference(&v, c, STEP, |vv| work.eval(spec, t, &y, &z, vv, &p).value);
            compare(analytic.hv[c], fd)?;
        }
    }
    Ok(worst)
}

/// Adjoint process on the ensemble.
#[derive(Clone, Debug)]
pub struct AdjointPath {
    /// `(N + 1) x P x n`.
    pub p: StepArray,
    /// `E[max_i |p_i|^2]`.
    pub sup_sq: Estimate,
    pub ensemble: EnsembleId,
}

pub fn solve_adjoint(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Result<AdjointPath> {
    if bundle.ensemble != ensemble.id() {
        return Err(Error::EnsembleMismatch(
            "bundle was solved on a different ensemble".into(),
        ));
    }
    let dims = spec.dims;
    let (n, d) = (dims.n, dims.d);
    let steps = ensemble.steps();
    let paths = ensemble.path_count();
    let grid = ensemble.grid();
    let model = spec.model.as_ref();
    let per = (steps + 1) * n;
    let mut buf = vec![0.0; paths * per];
    par::try_for_each_path(&mut buf, per, |k, out| {
        let mut work = HamiltonianWork::new(dims);
        model.initial_cost_grad(bundle.y.at(0, k), &mut out[..n]);
        if out[..n].iter().any(|x| !x.is_finite()) {
            return Err(0);
        }
        for i in 0..steps {
            let (head, tail) = out.split_at_mut((i + 1) * n);
            let p = &head[i * n..];
            let next = &mut tail[..n];
            let dt = grid.step_len(i);
            let dw = ensemble.dw(k, i);
            let e = work.eval(
                spec,
                grid.t(i),
                bundle.y.at(i, k),
                bundle.z.at(i, k),
                bundle.control.at(i, k),
                p,
            );
            for a in 0..n {
                let noise: f64 = (0..d).map(|j| e.hz[a * d + j] * dw[j]).sum();
                next[a] = p[a] - e.hy[a] * dt - noise;
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(i + 1);
            }
        }
        Ok(())
    })
    .map_err(|step| Error::NonFinite {
        quantity: "adjoint",
        step,
    })?;

    let mut p = StepArray::zeros(steps + 1, paths, n);
    for k in 0..paths {
        for i in 0..=steps {
            p.at_mut(i, k)
                .copy_from_slice(&buf[k * per + i * n..k * per + (i + 1) * n]);
        }
    }
    let sup_sq = Estimate::from_paths(paths, |k| {
        buf[k * per..(k + 1) * per]
            .chunks(n)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    });
    Ok(AdjointPath {
        p,
        sup_sq,
        ensemble: ensemble.id(),
    })
}

/// `H_v` along the solution, `N x P x m`.
pub fn hv_field(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
    adjoint: &AdjointPath,
) -> Result<StepArray> {
    if adjoint.ensemble != ensemble.id() || bundle.ensemble != ensemble.id() {
        return Err(Error::EnsembleMismatch(
            "inputs were computed on different ensembles".into(),
        ));
    }
    let dims = spec.dims;
    let m = dims.m;
    let grid = ensemble.grid();
    let mut out = StepArray::zeros(ensemble.steps(), ensemble.path_count(), m);
    for i in 0..ensemble.steps() {
        let t = grid.t(i);
        par::for_each_path(out.step_mut(i), m, |k, row| {
            let mut work = HamiltonianWork::new(dims);
            let e = work.eval(
                spec,
                t,
                bundle.y.at(i, k),
                bundle.z.at(i, k),
                bundle.control.at(i, k),
                adjoint.p.at(i, k),
            );
            row.copy_from_slice(&e.hv);
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bsde::{solve_bsde, ControlProcess, RegressionBasis};
    use crate::model::{AssumptionProfile, ControlSet, FnModel};
    use crate::sampling::{sample_ensemble, TimeGrid};

    fn spec_of(model: FnModel) -> ProblemSpec {
        ProblemSpec::new(
            Dimensions::new(1, 1, 1).unwrap(),
            Arc::new(model),
            ControlSet::interval(-2.0, 2.0),
            1.0,
            AssumptionProfile::default(),
        )
        .unwrap()
    }

    fn lq(kappa: f64) -> FnModel {
        FnModel {
            driver: Box::new(|_, _, _, v, out| out[0] = v[0]),
            driver_grad: Box::new(|_, _, _, _, g| g.bv[0] = 1.0),
            running_cost: Box::new(|_, _, _, v| 0.5 * v[0] * v[0]),
            running_cost_grad: Box::new(|_, _, _, v, g| g.hv[0] = v[0]),
            initial_cost: Box::new(move |y| kappa * y[0]),
            initial_cost_grad: Box::new(move |_, out| out[0] = kappa),
            terminal: Box::new(|w, out| out[0] = w[0]),
        }
    }

    fn nonlinear() -> FnModel {
        FnModel {
            driver: Box::new(|_, y, z, v, out| {
                out[0] = v[0].sin() + 0.1 * y[0].tanh() + 0.1 * z[0]
            }),
            driver_grad: Box::new(|_, y, _, v, g| {
                g.by[0] = 0.1 / y[0].cosh().powi(2);
                g.bz[0] = 0.1;
                g.bv[0] = v[0].cos();
            }),
            running_cost: Box::new(|_, y, _, v| 0.5 * v[0] * v[0] + 0.1 * y[0] * y[0]),
            running_cost_grad: Box::new(|_, y, _, v, g| {
                g.hy[0] = 0.2 * y[0];
                g.hv[0] = v[0];
            }),
            initial_cost: Box::new(|y| y[0].tanh()),
            initial_cost_grad: Box::new(|y, out| out[0] = 1.0 / y[0].cosh().powi(2)),
            terminal: Box::new(|w, out| out[0] = w[0]),
        }
    }

    #[test]
    fn zero_costate_gives_minus_running_cost() {
        let spec = spec_of(nonlinear());
        let e = hamiltonian(&spec, 0.3, &[0.4], &[0.2], &[0.5], &[0.0]).unwrap();
        let h = 0.5 * 0.25 + 0.1 * 0.16;
        assert_eq!(e.value, -h);
        assert_eq!(e.hv, vec![-0.5]);
    }

    #[test]
    fn lq_arithmetic() {
        let spec = spec_of(lq(0.5));
        let e = hamiltonian(&spec, 0.0, &[0.0], &[0.0], &[2.0], &[1.0]).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.hv, vec![-1.0]);
    }

    #[test]
    fn linear_in_costate_up_to_running_cost() {
        let spec = spec_of(nonlinear());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (y, z, v) = (
                [rng.random_range(-2.0..2.0)],
                [rng.random_range(-2.0..2.0)],
                [rng.random_range(-1.0..1.0)],
            );
            let (p1, p2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let h = spec.model.running_cost(0.5, &y, &z, &v);
            let f = |p: f64| hamiltonian(&spec, 0.5, &y, &z, &v, &[p]).unwrap().value + h;
            assert!((f(p1 + p2) - f(p1) - f(p2)).abs() < 1e-12);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        assert!(hamiltonian_grad_check(&spec_of(nonlinear()), 20, 1).unwrap() <= 1e-6);
        assert!(hamiltonian_grad_check(&spec_of(lq(0.5)), 20, 2).unwrap() <= 1e-6);
    }

    #[test]
    fn wrong_partial_is_detected() {
        let model = FnModel {
            driver_grad: Box::new(|_, _, _, _, g| g.bv[0] = 2.0),
            ..lq(0.5)
        };
        assert!(hamiltonian_grad_check(&spec_of(model), 5, 3).unwrap() > 0.1);
    }

    fn adjoint_of(model: FnModel, p: usize, seed: u64) -> (PathEnsemble, AdjointPath) {
        let spec = spec_of(model);
        let e = sample_ensemble(&TimeGrid::new(1.0, 20).unwrap(), 1, p, seed, false).unwrap();
        let u = ControlProcess::constant(&e, &[0.3], &spec.control_set).unwrap();
        let b = solve_bsde(&spec, &e, &u, &RegressionBasis::default(), 2).unwrap();
        let adj = solve_adjoint(&spec, &e, &b).unwrap();
        (e, adj)
    }

    #[test]
    fn constant_costate_when_hamiltonian_ignores_state() {
        let (_, adj) = adjoint_of(lq(0.5), 500, 1);
        assert!(adj.p.as_slice().iter().all(|p| *p == 0.5));
        assert_eq!(adj.sup_sq.value, 0.25);
    }

    #[test]
    fn constant_state_gradient_integrates_linearly() {
        let a = 0.7;
        let model = FnModel {
            running_cost: Box::new(move |_, y, _, _| -a * y[0]),
            running_cost_grad: Box::new(move |_, _, _, _, g| g.hy[0] = -a),
            ..FnModel::scalar()
        };
        let (e, adj) = adjoint_of(model, 200, 2);
        for i in 0..=20 {
            let exact = 1.0 - a * e.grid().t(i);
            for k in [0, 199] {
                assert!((adj.p.at(i, k)[0] - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_noise_gradient_gives_brownian_costate() {
        let sigma = 0.8;
        let p = 10_000;
        let model = FnModel {
            running_cost: Box::new(move |_, _, z, _| -sigma * z[0]),
            running_cost_grad: Box::new(move |_, _, _, _, g| g.hz[0] = -sigma),
            ..FnModel::scalar()
        };
        let (e, adj) = adjoint_of(model, p, 3);
        for i in [5, 10, 20] {
            let t = e.grid().t(i);
            for k in [0, 9999] {
                assert!((adj.p.at(i, k)[0] - (1.0 - sigma * e.w(k, i)[0])).abs() < 1e-12);
            }
            let vals: Vec<f64> = (0..p).map(|k| adj.p.at(i, k)[0]).collect();
            let mean = vals.iter().sum::<f64>() / p as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (p - 1) as f64;
            let target = sigma * sigma * t;
            assert!(
                (var - target).abs() <= 4.0 * target / (p as f64).sqrt(),
                "{var} vs {target}"
            );
        }
    }

    #[test]
    fn initial_value_is_bitwise_gradient_of_initial_cost() {
        let spec = spec_of(nonlinear());
        let e = sample_ensemble(&TimeGrid::new(1.0, 10).unwrap(), 1, 300, 4, false).unwrap();
        let u = ControlProcess::constant(&e, &[0.1], &spec.control_set).unwrap();
        let b = solve_bsde(&spec, &e, &u, &RegressionBasis::default(), 2).unwrap();
        let adj = solve_adjoint(&spec, &e, &b).unwrap();
        for k in 0..300 {
            assert_eq!(adj.p.at(0, k)[0], 1.0 / b.y.at(0, k)[0].cosh().powi(2));
        }
    }
}
