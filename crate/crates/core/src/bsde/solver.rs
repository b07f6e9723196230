use serde::{Deserialize, Serialize};

use super::{
    ControlProcess, RegressionBasis, Regressors, SolverMeta, StepFit, TrajectoryBundle,
    VariationalSolution,
};
use crate::array::StepArray;
use crate::model::{DriverGrad, ProblemSpec};
use crate::sampling::{EnsembleId, PathEnsemble};
use crate::stats::Estimate;
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub basis: RegressionBasis,
    /// Fixed-point refinements of the implicit `y` relation after the explicit step.
    pub picard_iters: usize,
    /// Optional clip `|xi| <= cap`, applied componentwise.
    pub winsor_cap: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            picard_iters: 2,
            winsor_cap: None,
        }
    }
}

struct Backward {
    y: StepArray,
    z: StepArray,
    fits: Vec<StepFit>,
}

/// Regression-based backward sweep shared by every system solved here.
///
/// `driver(step, path, y, z, out)` writes the drift at one grid point.
fn backward<D>(
    regs: &Regressors,
    ensemble: &PathEnsemble,
    terminal: &[f64],
    width: usize,
    picard_iters: usize,
    driver: D,
) -> Result<Backward>
where
    D: Fn(usize, usize, &[f64], &[f64], &mut [f64]) + Sync + Send,
{
    let n_steps = ensemble.steps();
    let paths = ensemble.path_count();
    let d = ensemble.dim();
    let zw = width * d;
    let mut y = StepArray::zeros(n_steps + 1, paths, width);
    let mut z = StepArray::zeros(n_steps, paths, zw);
    y.step_mut(n_steps).copy_from_slice(terminal);
    let mut fits = Vec::with_capacity(n_steps);

    for i in (0..n_steps).rev() {
        let reg = regs.at(i);
        let dt = ensemble.grid().step_len(i);
        let next = y.step(i + 1);
        let fit = reg.fit(next, width)?;
        let cond = reg.values(&fit);

        let mut prod = vec![0.0; paths * zw];
        par::for_each_path(&mut prod, zw, |k, out| {
            let dw = ensemble.dw(k, i);
            for a in 0..width {
                let r = next[k * width + a] - cond[k * width + a];
                for j in 0..d {
                    out[a * d + j] = r * dw[j];
                }
            }
        });
        let mut zi = reg.project(&prod, zw)?;
        for v in &mut zi {
            *v /= dt;
        }
        if zi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "z",
                step: i,
            });
        }
        z.step_mut(i).copy_from_slice(&zi);

        let ys = y.step_mut(i);
        par::for_each_path(ys, width, |k, out| {
            let e = &cond[k * width..(k + 1) * width];
            let zk = &zi[k * zw..(k + 1) * zw];
            let mut guess = e.to_vec();
            let mut drift = vec![0.0; width];
            for _ in 0..=picard_iters {
                driver(i, k, &guess, zk, &mut drift);
                for a in 0..width {
                    guess[a] = e[a] - drift[a] * dt;
                }
            }
            out.copy_from_slice(&guess);
        });
        if y.step(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "y",
                step: i,
            });
        }
        fits.push(fit);
    }
    fits.reverse();
    Ok(Backward { y, z, fits })
}

/// `y^v - y^w`, `z^v - z^w` and their mean-square functionals.
#[derive(Clone, Debug)]
pub struct DifferenceSolution {
    pub dy: StepArray,
    pub dz: StepArray,
    /// `max_i E|dy_i|^2`, with the standard error at the maximizing step.
    pub sup_y: Estimate,
    pub sup_step: usize,
    /// `E int |dz|^2 dt`.
    pub int_z: Estimate,
}

/// State extended by the cost process `x` (last component) with driver `h`.
#[derive(Clone, Debug)]
pub struct AugmentedSolution {
    /// `(N + 1) x P x (n + 1)`.
    pub y: StepArray,
    /// `N x P x ((n + 1) d)`.
    pub z: StepArray,
}

impl AugmentedSolution {
    pub fn x0(&self, path: usize) -> f64 {
        let w = self.y.width();
        self.y.at(0, path)[w - 1]
    }
}

/// Solver bound to one problem and one ensemble; regressions are factorized
/// once and reused by every solve.
pub struct BsdeSolver<'a> {
    spec: &'a ProblemSpec,
    ensemble: &'a PathEnsemble,
    regs: Regressors,
    options: SolverOptions,
    terminal: Vec<f64>,
    winsorized: usize,
}

impl<'a> BsdeSolver<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        ensemble: &'a PathEnsemble,
        options: SolverOptions,
    ) -> Result<Self> {
        if ensemble.dim() != spec.dims.d {
            return Err(Error::Shape(format!(
                "ensemble has dimension {}, problem has d={}",
                ensemble.dim(),
                spec.dims.d
            )));
        }
        let h = ensemble.grid().horizon();
        if (h - spec.horizon).abs() > 1e-12 * spec.horizon.max(1.0) {
            return Err(Error::EnsembleMismatch(format!(
                "ensemble horizon {h} differs from problem horizon {}",
                spec.horizon
            )));
        }
        if let Some(cap) = options.winsor_cap {
            if !(cap > 0.0) {
                return Err(Error::InvalidInput("winsor cap must be positive".into()));
            }
        }
        let regs = Regressors::new(ensemble, &options.basis)?;
        let n = spec.dims.n;
        let d = spec.dims.d;
        let paths = ensemble.path_count();
        let mut terminal = vec![0.0; paths * n];
        par::for_each_path(&mut terminal, n, |k, out| {
            spec.model.terminal_path(ensemble.path(k), d, out)
        });
        let mut winsorized = 0;
        if let Some(cap) = options.winsor_cap {
            for row in terminal.chunks_mut(n) {
                let mut hit = false;
                for v in row {
                    if v.abs() > cap {
                        *v = v.clamp(-cap, cap);
                        hit = true;
                    }
                }
                winsorized += hit as usize;
            }
        }
        if terminal.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "terminal value",
                step: ensemble.steps(),
            });
        }
        Ok(Self {
            spec,
            ensemble,
            regs,
            options,
            terminal,
            winsorized,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn ensemble(&self) -> &PathEnsemble {
        self.ensemble
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn regressors(&self) -> &Regressors {
        &self.regs
    }

    /// Terminal values `xi` per path (after the optional cap), `P x n`.
    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn winsorized_paths(&self) -> usize {
        self.winsorized
    }

    fn check_control(&self, control: &ControlProcess) -> Result<()> {
        control.check_shape(self.ensemble, self.spec.dims.m)?;
        control.require_admissible()
    }

    pub fn solve(&self, control: &ControlProcess) -> Result<TrajectoryBundle> {
        self.check_control(control)?;
        let grid = self.ensemble.grid();
        let model = self.spec.model.as_ref();
        let out = backward(
            &self.regs,
            self.ensemble,
            &self.terminal,
            self.spec.dims.n,
            self.options.picard_iters,
            |i, k, y, z, drift| model.driver(grid.t(i), y, z, control.at(i, k), drift),
        )?;
        Ok(TrajectoryBundle {
            y: out.y,
            z: out.z,
            control: control.clone(),
            grid: grid.clone(),
            ensemble: self.ensemble.id(),
            meta: SolverMeta {
                basis: self.options.basis.clone(),
                picard_iters: self.options.picard_iters,
                winsor_cap: self.options.winsor_cap,
                winsorized_paths: self.winsorized,
            },
            fits: out.fits,
        })
    }

    /// Linearized system along `base` in the direction `v - u`.
    pub fn solve_variational(
        &self,
        base: &TrajectoryBundle,
        v: &ControlProcess,
    ) -> Result<VariationalSolution> {
        self.check_control(v)?;
        let direction = v.values().sub(base.control.values());
        let mut sol = self.solve_variational_direction(base, &direction)?;
        sol.probe = Some(v.clone());
        Ok(sol)
    }

    /// Linearized system for an arbitrary direction `N x P x m` (not required to
    /// come from an admissible probe).
    pub fn solve_variational_direction(
        &self,
        base: &TrajectoryBundle,
        direction: &StepArray,
    ) -> Result<VariationalSolution> {
        base.check_ensemble(self.ensemble)?;
        if !direction.same_shape(base.control.values()) {
            return Err(Error::Shape(
                "direction must have the shape of the control".into(),
            ));
        }
        let dims = self.spec.dims;
        let (n, m) = (dims.n, dims.m);
        let grid = self.ensemble.grid();
        let model = self.spec.model.as_ref();
        let spec = self.spec;
        let zero = vec![0.0; self.ensemble.path_count() * n];
        let out = backward(
            &self.regs,
            self.ensemble,
            &zero,
            n,
            self.options.picard_iters,
            |i, k, yv, zv, drift| {
                let mut g = DriverGrad::zeros(dims);
                model.driver_grad(
                    grid.t(i),
                    base.y.at(i, k),
                    base.z.at(i, k),
                    base.control.at(i, k),
                    &mut g,
                );
                spec.apply_bz(&g.bz, zv, drift);
                let dv = direction.at(i, k);
                for a in 0..n {
                    let mut s = 0.0;
                    for c in 0..n {
                        s += g.by[a * n + c] * yv[c];
                    }
                    for c in 0..m {
                        s += g.bv[a * m + c] * dv[c];
                    }
                    drift[a] += s;
                }
            },
        )?;
        Ok(VariationalSolution {
            y: out.y,
            z: out.z,
            base: base.control.clone(),
            probe: None,
            direction: direction.clone(),
            ensemble: self.ensemble.id(),
        })
    }

    /// `(n + 1)`-dimensional system with drift `(b, h)` and terminal `(xi, eta)`.
    pub fn solve_augmented(
        &self,
        control: &ControlProcess,
        eta: &[f64],
    ) -> Result<AugmentedSolution> {
        self.check_control(control)?;
        let n = self.spec.dims.n;
        let d = self.spec.dims.d;
        let paths = self.ensemble.path_count();
        if eta.len() != paths {
            return Err(Error::Shape(format!(
                "eta has {} values, expected {paths}",
                eta.len()
            )));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("eta must be finite".into()));
        }
        let w = n + 1;
        let mut terminal = vec![0.0; paths * w];
        for k in 0..paths {
            terminal[k * w..k * w + n].copy_from_slice(&self.terminal[k * n..(k + 1) * n]);
            terminal[k * w + n] = eta[k];
        }
        let grid = self.ensemble.grid();
        let model = self.spec.model.as_ref();
        let out = backward(
            &self.regs,
            self.ensemble,
            &terminal,
            w,
            self.options.picard_iters,
            |i, k, y, z, drift| {
                let t = grid.t(i);
                let v = control.at(i, k);
                let (ys, zs) = (&y[..n], &z[..n * d]);
                model.driver(t, ys, zs, v, &mut drift[..n]);
                drift[n] = model.running_cost(t, ys, zs, v);
            },
        )?;
        Ok(AugmentedSolution { y: out.y, z: out.z })
    }
}

/// Solves the state equation under `control`.
pub fn solve_bsde(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    control: &ControlProcess,
    basis: &RegressionBasis,
    picard_iters: usize,
) -> Result<TrajectoryBundle> {
    let options = SolverOptions {
        basis: basis.clone(),
        picard_iters,
        winsor_cap: None,
    };
    BsdeSolver::new(spec, ensemble, options)?.solve(control)
}

/// Solves the linearized system along `base` in the direction `v - u`.
pub fn solve_variational(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    base: &TrajectoryBundle,
    v: &ControlProcess,
    basis: &RegressionBasis,
    picard_iters: usize,
) -> Result<VariationalSolution> {
    let options = SolverOptions {
        basis: basis.clone(),
        picard_iters,
        winsor_cap: base.meta.winsor_cap,
    };
    BsdeSolver::new(spec, ensemble, options)?.solve_variational(base, v)
}

/// Pathwise difference of two solutions on one ensemble.
pub fn solve_difference(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle_v: &TrajectoryBundle,
    bundle_w: &TrajectoryBundle,
) -> Result<DifferenceSolution> {
    let id: EnsembleId = ensemble.id();
    if bundle_v.ensemble != id || bundle_w.ensemble != id {
        return Err(Error::EnsembleMismatch(
            "difference needs both bundles on the given ensemble".into(),
        ));
    }
    if bundle_v.y.width() != spec.dims.n || bundle_w.y.width() != spec.dims.n {
        return Err(Error::Shape(
            "bundle width does not match the problem".into(),
        ));
    }
    let dy = bundle_v.y.sub(&bundle_w.y);
    let dz = bundle_v.z.sub(&bundle_w.z);
    let paths = ensemble.path_count();
    let (n, zw) = (dy.width(), dz.width());
    let mut sup_y = Estimate::exact(0.0);
    let mut sup_step = 0;
    for i in 0..dy.steps() {
        let s = dy.step(i);
        let e = Estimate::from_paths(paths, |k| s[k * n..(k + 1) * n].iter().map(|x| x * x).sum());
        if e.value > sup_y.value {
            sup_y = e;
            sup_step = i;
        }
    }
    let grid = ensemble.grid();
    let int_z = Estimate::from_paths(paths, |k| {
        (0..dz.steps())
            .map(|i| dz.at(i, k).iter().map(|x| x * x).sum::<f64>() * grid.step_len(i))
            .sum()
    });
    debug_assert_eq!(zw, spec.dims.z_len());
    Ok(DifferenceSolution {
        dy,
        dz,
        sup_y,
        sup_step,
        int_z,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{AssumptionProfile, ControlSet, Dimensions, FnModel};
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

    fn ens(p: usize, n: usize, seed: u64) -> PathEnsemble {
        sample_ensemble(&TimeGrid::new(1.0, n).unwrap(), 1, p, seed, false).unwrap()
    }

    fn control_model() -> FnModel {
        FnModel {
            driver: Box::new(|_, _, _, v, out| out[0] = v[0]),
            driver_grad: Box::new(|_, _, _, _, g| g.bv[0] = 1.0),
            terminal: Box::new(|w, out| out[0] = w[0]),
            ..FnModel::scalar()
        }
    }

    fn constant(e: &PathEnsemble, c: f64) -> ControlProcess {
        ControlProcess::constant(e, &[c], &ControlSet::interval(-2.0, 2.0)).unwrap()
    }

    #[test]
    fn constant_terminal_is_exact() {
        let spec = spec_of(FnModel {
            terminal: Box::new(|_, out| out[0] = 3.0),
            ..FnModel::scalar()
        });
        let e = ens(2000, 20, 1);
        let b = solve_bsde(
            &spec,
            &e,
            &constant(&e, 0.0),
            &RegressionBasis::default(),
            2,
        )
        .unwrap();
        assert!(b.y.as_slice().iter().all(|v| *v == 3.0));
        assert!(b.z.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn brownian_terminal_recovers_martingale_representation() {
        let (p, n) = (10_000, 50);
        let spec = spec_of(FnModel {
            terminal: Box::new(|w, out| out[0] = w[0]),
            ..FnModel::scalar()
        });
        let e = ens(p, n, 2);
        let b = solve_bsde(
            &spec,
            &e,
            &constant(&e, 0.0),
            &RegressionBasis::polynomial(1),
            2,
        )
        .unwrap();
        let tol = 5.0 * (1.0 / n as f64).sqrt().max(1.0 / (p as f64).sqrt());
        let mut worst_y = 0.0f64;
        let mut worst_z = 0.0f64;
        for i in 0..n {
            let ry = (0..p)
                .map(|k| (b.y.at(i, k)[0] - e.w(k, i)[0]).powi(2))
                .sum::<f64>()
                / p as f64;
            let rz = (0..p).map(|k| (b.z.at(i, k)[0] - 1.0).powi(2)).sum::<f64>() / p as f64;
            worst_y = worst_y.max(ry.sqrt());
            worst_z = worst_z.max(rz.sqrt());
        }
        assert!(worst_y <= tol, "y rms {worst_y} > {tol}");
        assert!(worst_z <= tol, "z rms {worst_z} > {tol}");
    }

    #[test]
    fn linear_driver_matches_backward_ode() {
        let beta = 0.5;
        let spec = spec_of(FnModel {
            driver: Box::new(move |_, y, _, _, out| out[0] = beta * y[0]),
            driver_grad: Box::new(move |_, _, _, _, g| g.by[0] = beta),
            terminal: Box::new(|_, out| out[0] = 2.0),
            ..FnModel::scalar()
        });
        let e = ens(10_000, 50, 3);
        let b = solve_bsde(
            &spec,
            &e,
            &constant(&e, 0.0),
            &RegressionBasis::default(),
            2,
        )
        .unwrap();
        for i in 0..=50 {
            let exact = 2.0 * (beta * (e.grid().t(i) - 1.0)).exp();
            for k in [0, 4999, 9999] {
                assert!((b.y.at(i, k)[0] - exact).abs() / exact <= 0.02);
            }
        }
        assert!(b.z.as_slice().iter().all(|z| z.abs() < 1e-12));
    }

    #[test]
    fn terminal_is_bitwise_and_steps_are_adapted() {
        let spec = spec_of(FnModel {
            driver: Box::new(|_, _, _, v, out| out[0] = v[0]),
            terminal: Box::new(|w, out| out[0] = w[0].sin() + w[0] * w[0]),
            ..FnModel::scalar()
        });
        let e = ens(3000, 10, 4);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let b = solver.solve(&constant(&e, 0.3)).unwrap();
        for k in 0..3000 {
            let w = e.w(k, 10)[0];
            assert_eq!(b.y.at(10, k)[0], w.sin() + w * w);
        }
        // y_i is a function of W_{t_i} alone: rebuild it from the stored fit
        let dt = e.grid().dt();
        for i in [1, 5, 9] {
            let reg = solver.regressors().at(i);
            for k in [0, 7, 2999] {
                let e_i = reg.evaluate(&b.fits[i], e.w(k, i))[0];
                assert_eq!(b.y.at(i, k)[0], e_i - 0.3 * dt);
            }
        }
    }

    #[test]
    fn zero_driver_mean_is_constant_in_time() {
        let p = 10_000;
        let spec = spec_of(FnModel {
            terminal: Box::new(|w, out| out[0] = w[0].exp()),
            ..FnModel::scalar()
        });
        let e = ens(p, 20, 5);
        let b = solve_bsde(
            &spec,
            &e,
            &constant(&e, 0.0),
            &RegressionBasis::default(),
            2,
        )
        .unwrap();
        let mom = b.step_moments();
        let last = &mom[20];
        let tol = 4.0 * (last.1[0] / p as f64).sqrt();
        for (mean, _) in &mom {
            assert!((mean[0] - last.0[0]).abs() <= tol);
        }
    }

    #[test]
    fn non_finite_driver_names_the_step() {
        let spec = spec_of(FnModel {
            driver: Box::new(|_, _, _, _, out| out[0] = f64::NAN),
            ..FnModel::scalar()
        });
        let e = ens(100, 8, 6);
        let err = solve_bsde(
            &spec,
            &e,
            &constant(&e, 0.0),
            &RegressionBasis::default(),
            0,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::NonFinite {
                    quantity: "y",
                    step: 7
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn inadmissible_control_rejected() {
        let spec = spec_of(control_model());
        let e = ens(10, 4, 7);
        let bad = ControlProcess::constant(&e, &[3.0], &ControlSet::interval(-2.0, 2.0)).unwrap();
        assert!(!bad.admissible());
        assert!(solve_bsde(&spec, &e, &bad, &RegressionBasis::default(), 2).is_err());
    }

    #[test]
    fn variational_examples() {
        let spec = spec_of(control_model());
        let e = ens(2000, 20, 8);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let u = constant(&e, 0.0);
        let base = solver.solve(&u).unwrap();

        let same = solver.solve_variational(&base, &u).unwrap();
        assert!(same.y.as_slice().iter().all(|v| *v == 0.0));
        assert!(same.z.as_slice().iter().all(|v| *v == 0.0));

        let sol = solver.solve_variational(&base, &constant(&e, 1.0)).unwrap();
        for i in 0..=20 {
            let expect = -(1.0 - e.grid().t(i));
            for k in [0, 1999] {
                assert!((sol.y.at(i, k)[0] - expect).abs() < 1e-12);
            }
        }
        assert!(sol.y.step(20).iter().all(|v| *v == 0.0));
        assert!(sol.z.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn variational_is_linear_in_direction() {
        let spec = spec_of(FnModel {
            driver: Box::new(|_, y, z, v, out| {
                out[0] = v[0].sin() + 0.1 * y[0].tanh() + 0.1 * z[0]
            }),
            driver_grad: Box::new(|_, y, _, v, g| {
                g.by[0] = 0.1 / y[0].cosh().powi(2);
                g.bz[0] = 0.1;
                g.bv[0] = v[0].cos();
            }),
            terminal: Box::new(|w, out| out[0] = w[0]),
            ..FnModel::scalar()
        });
        let e = ens(2000, 20, 9);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let base = solver.solve(&constant(&e, 0.2)).unwrap();
        let dir = constant(&e, 0.7).values().sub(base.control.values());
        let one = solver.solve_variational_direction(&base, &dir).unwrap();
        for alpha in [2.0, -0.5, 13.0] {
            let s = solver
                .solve_variational_direction(&base, &dir.scale(alpha))
                .unwrap();
            for (a, b) in one.y.as_slice().iter().zip(s.y.as_slice()) {
                assert!((alpha * a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
            for (a, b) in one.z.as_slice().iter().zip(s.z.as_slice()) {
                assert!((alpha * a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn difference_examples() {
        let e = ens(1000, 20, 10);
        let spec = spec_of(control_model());
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let bv = solver.solve(&constant(&e, 1.0)).unwrap();
        let bw = solver.solve(&constant(&e, 0.0)).unwrap();

        let same = solve_difference(&spec, &e, &bv, &bv).unwrap();
        assert_eq!(same.sup_y.value, 0.0);
        assert_eq!(same.int_z.value, 0.0);

        let diff = solve_difference(&spec, &e, &bv, &bw).unwrap();
        assert!((diff.sup_y.value - 1.0).abs() < 1e-10);
        assert_eq!(diff.sup_step, 0);
        assert!(diff.int_z.value < 1e-20);

        let free = spec_of(FnModel {
            terminal: Box::new(|w, out| out[0] = w[0]),
            ..FnModel::scalar()
        });
        let s = BsdeSolver::new(&free, &e, SolverOptions::default()).unwrap();
        let a = s.solve(&constant(&e, 1.0)).unwrap();
        let b = s.solve(&constant(&e, -1.5)).unwrap();
        let d = solve_difference(&free, &e, &a, &b).unwrap();
        assert_eq!(d.sup_y.value, 0.0);
        assert_eq!(d.int_z.value, 0.0);
    }

    #[test]
    fn difference_rejects_foreign_ensemble() {
        let spec = spec_of(control_model());
        let e1 = ens(100, 4, 11);
        let e2 = ens(100, 4, 12);
        let a = solve_bsde(
            &spec,
            &e1,
            &constant(&e1, 0.0),
            &RegressionBasis::default(),
            2,
        )
        .unwrap();
        let b = solve_bsde(
            &spec,
            &e2,
            &constant(&e2, 0.0),
            &RegressionBasis::default(),
            2,
        )
        .unwrap();
        assert!(matches!(
            solve_difference(&spec, &e1, &a, &b),
            Err(Error::EnsembleMismatch(_))
        ));
    }

    #[test]
    fn augmented_cost_state_integrates_running_cost() {
        let spec = spec_of(FnModel {
            running_cost: Box::new(|_, _, _, v| 0.5 * v[0] * v[0]),
            ..control_model()
        });
        let e = ens(500, 10, 13);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let aug = solver
            .solve_augmented(&constant(&e, 1.0), &vec![0.25; 500])
            .unwrap();
        // x_0 = eta - int h dt = 0.25 - 0.5
        for k in [0, 499] {
            assert!((aug.x0(k) + 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn winsor_cap_clips_and_counts() {
        let spec = spec_of(FnModel {
            terminal: Box::new(|w, out| out[0] = 10.0 * w[0]),
            ..FnModel::scalar()
        });
        let e = ens(1000, 4, 14);
        let opts = SolverOptions {
            winsor_cap: Some(5.0),
            ..Default::default()
        };
        let solver = BsdeSolver::new(&spec, &e, opts).unwrap();
        let expected = (0..1000)
            .filter(|&k| (10.0 * e.w(k, 4)[0]).abs() > 5.0)
            .count();
        assert_eq!(solver.winsorized_paths(), expected);
        assert!(solver.terminal().iter().all(|v| v.abs() <= 5.0));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let spec = spec_of(FnModel {
            terminal: Box::new(|w, out| out[0] = w[0].powi(3)),
            ..control_model()
        });
        let e = ens(3000, 10, 15);
        let run = |t| {
            par::with_threads(t, || {
                solve_bsde(
                    &spec,
                    &e,
                    &constant(&e, 0.4),
                    &RegressionBasis::default(),
                    2,
                )
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
    }
}
