//! Cost estimators, convex perturbations, first-order conditions and the
//! projected-gradient optimizer.
//!
//! The descent direction for `J` is `+H_v`: the derivative of `J` at `u` in the
//! direction `v - u` is `E int H_v . (u - v) dt`.

use serde::{Deserialize, Serialize};

use crate::adjoint::{hv_field, solve_adjoint, AdjointPath};
use crate::array::StepArray;
use crate::bsde::{BsdeSolver, ControlProcess, SolverOptions, TrajectoryBundle};
use crate::model::ProblemSpec;
use crate::sampling::PathEnsemble;
use crate::stats::{mean_stderr, Estimate, ROUNDOFF_FLOOR};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMethod {
    Direct,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub j: f64,
    pub initial_term: f64,
    pub running_term: f64,
    pub stderr: f64,
    pub method: CostMethod,
}

impl CostBreakdown {
    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.j,
            stderr: self.stderr,
        }
    }
}

/// Per-path `xi - sum b dt`, an unbiased noisy copy of `y_0` (`P x n`).
fn state_proxy(spec: &ProblemSpec, ensemble: &PathEnsemble, bundle: &TrajectoryBundle) -> Vec<f64> {
    let n = spec.dims.n;
    let steps = ensemble.steps();
    let grid = ensemble.grid();
    let model = spec.model.as_ref();
    let mut out = vec![0.0; ensemble.path_count() * n];
    par::for_each_path(&mut out, n, |k, row| {
        row.copy_from_slice(bundle.y.at(steps, k));
        let mut b = vec![0.0; n];
        for i in 0..steps {
            model.driver(
                grid.t(i),
                bundle.y.at(i, k),
                bundle.z.at(i, k),
                bundle.control.at(i, k),
                &mut b,
            );
            for a in 0..n {
                row[a] -= b[a] * grid.step_len(i);
            }
        }
    });
    out
}

/// `y_0` with a standard error taken from the per-path state proxy.
pub fn initial_state_estimate(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Result<Vec<Estimate>> {
    bundle.check_ensemble(ensemble)?;
    let n = spec.dims.n;
    let paths = ensemble.path_count();
    let proxy = state_proxy(spec, ensemble, bundle);
    Ok((0..n)
        .map(|a| {
            let value = par::sum_paths(paths, |k| bundle.y.at(0, k)[a]) / paths as f64;
            let (_, stderr) = mean_stderr(paths, |k| proxy[k * n + a]);
            Estimate { value, stderr }
        })
        .collect())
}

fn column_means(data: &[f64], width: usize) -> Vec<f64> {
    let paths = data.len() / width;
    (0..width)
        .map(|c| par::sum_paths(paths, |k| data[k * width + c]) / paths as f64)
        .collect()
}

/// Per-path `g(y_0) + g_y(y_0).(proxy - mean proxy)`: carries the sampling
/// noise of `y_0` into the standard error.
fn initial_cost_samples(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> (Vec<f64>, Vec<f64>) {
    let n = spec.dims.n;
    let model = spec.model.as_ref();
    let proxy = state_proxy(spec, ensemble, bundle);
    let mean = column_means(&proxy, n);
    let paths = ensemble.path_count();
    let mut g = vec![0.0; paths];
    let mut noisy = vec![0.0; paths];
    let mut pairs = vec![0.0; paths * 2];
    par::for_each_path(&mut pairs, 2, |k, out| {
        let y0 = bundle.y.at(0, k);
        let mut gy = vec![0.0; n];
        model.initial_cost_grad(y0, &mut gy);
        let gv = model.initial_cost(y0);
        let corr: f64 = (0..n).map(|a| gy[a] * (proxy[k * n + a] - mean[a])).sum();
        out[0] = gv;
        out[1] = gv + corr;
    });
    for k in 0..paths {
        g[k] = pairs[2 * k];
        noisy[k] = pairs[2 * k + 1];
    }
    (g, noisy)
}

/// Per-path `sum_i h(t_i, y_i, z_i, v_i) dt_i`.
fn running_cost_samples(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Result<Vec<f64>> {
    let grid = ensemble.grid();
    let model = spec.model.as_ref();
    let mut out = vec![0.0; ensemble.path_count()];
    par::try_for_each_path(&mut out, 1, |k, acc| {
        let mut s = 0.0;
        for i in 0..ensemble.steps() {
            let h = model.running_cost(
                grid.t(i),
                bundle.y.at(i, k),
                bundle.z.at(i, k),
                bundle.control.at(i, k),
            );
            if !h.is_finite() {
                return Err(Error::NonFiniteCost { path: k, step: i });
            }
            s += h * grid.step_len(i);
        }
        acc[0] = s;
        Ok(())
    })?;
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    par::sum_paths(v.len(), |k| v[k]) / v.len() as f64
}

/// `J = E[g(y_0)] + E[sum_i h_i dt]` on the ensemble.
pub fn evaluate_cost_direct(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Result<CostBreakdown> {
    bundle.check_ensemble(ensemble)?;
    let running = running_cost_samples(spec, ensemble, bundle)?;
    let (g, noisy) = initial_cost_samples(spec, ensemble, bundle);
    let initial_term = mean(&g);
    let running_term = mean(&running);
    let stderr = Estimate::from_paths(g.len(), |k| noisy[k] + running[k]).stderr;
    Ok(CostBreakdown {
        j: initial_term + running_term,
        initial_term,
        running_term,
        stderr,
        method: CostMethod::Direct,
    })
}

/// Cost through the system extended by `x` with drift `h` and terminal `eta`:
/// `J = E[g(y_0) - x_0] + E[eta]`.
pub fn evaluate_cost_augmented(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
    eta: f64,
) -> Result<CostBreakdown> {
    let options = SolverOptions {
        basis: bundle.meta.basis.clone(),
        picard_iters: bundle.meta.picard_iters,
        winsor_cap: bundle.meta.winsor_cap,
    };
    let solver = BsdeSolver::new(spec, ensemble, options)?;
    augmented_cost(&solver, bundle, eta)
}

/// As [`evaluate_cost_augmented`], reusing a prepared solver.
pub fn augmented_cost(
    solver: &BsdeSolver<'_>,
    bundle: &TrajectoryBundle,
    eta: f64,
) -> Result<CostBreakdown> {
    let spec = solver.spec();
    let ensemble = solver.ensemble();
    bundle.check_ensemble(ensemble)?;
    let n = spec.dims.n;
    let paths = ensemble.path_count();
    let eta_v = vec![eta; paths];
    let aug = solver.solve_augmented(&bundle.control, &eta_v)?;
    let model = spec.model.as_ref();
    let grid = ensemble.grid();
    let steps = ensemble.steps();

    // proxies for (y_0, x_0): terminal minus the integrated drift
    let w = n + 1;
    let mut proxy = vec![0.0; paths * w];
    par::try_for_each_path(&mut proxy, w, |k, row| {
        row.copy_from_slice(aug.y.at(steps, k));
        let mut b = vec![0.0; n];
        for i in 0..steps {
            let (t, dt) = (grid.t(i), grid.step_len(i));
            let y = &aug.y.at(i, k)[..n];
            let z = &aug.z.at(i, k)[..n * spec.dims.d];
            let v = bundle.control.at(i, k);
            model.driver(t, y, z, v, &mut b);
            let h = model.running_cost(t, y, z, v);
            if !h.is_finite() {
                return Err(Error::NonFiniteCost { path: k, step: i });
            }
            for a in 0..n {
                row[a] -= b[a] * dt;
            }
            row[n] -= h * dt;
        }
        Ok(())
    })?;
    let pm = column_means(&proxy, w);
    let mut samples = vec![0.0; paths * 3];
    par::for_each_path(&mut samples, 3, |k, out| {
        let y0 = &aug.y.at(0, k)[..n];
        let mut gy = vec![0.0; n];
        model.initial_cost_grad(y0, &mut gy);
        let g = model.initial_cost(y0);
        let x0 = aug.x0(k);
        let corr: f64 = (0..n)
            .map(|a| gy[a] * (proxy[k * w + a] - pm[a]))
            .sum::<f64>()
            - (proxy[k * w + n] - pm[n]);
        out[0] = g;
        out[1] = eta - x0;
        out[2] = g - x0 + eta + corr;
    });
    let initial_term = par::sum_paths(paths, |k| samples[3 * k]) / paths as f64;
    let running_term = par::sum_paths(paths, |k| samples[3 * k + 1]) / paths as f64;
    let stderr = Estimate::from_paths(paths, |k| samples[3 * k + 2]).stderr;
    Ok(CostBreakdown {
        j: initial_term + running_term,
        initial_term,
        running_term,
        stderr,
        method: CostMethod::Augmented,
    })
}

/// `u + theta (v - u)`. Both endpoints and the case `u = v` are reproduced exactly.
pub fn perturb(
    u: &ControlProcess,
    v: &ControlProcess,
    theta: f64,
    set: &crate::model::ControlSet,
) -> Result<ControlProcess> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidInput(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    if !u.values().same_shape(v.values()) {
        return Err(Error::Shape(
            "perturbation needs controls of equal shape".into(),
        ));
    }
    let mut values = StepArray::zeros(u.steps(), u.paths(), u.dim());
    for ((o, a), b) in values
        .as_mut_slice()
        .iter_mut()
        .zip(u.values().as_slice())
        .zip(v.values().as_slice())
    {
        *o = if theta == 1.0 {
            *b
        } else {
            a + theta * (b - a)
        };
    }
    let out = ControlProcess::new(values, set)?;
    if u.admissible() && v.admissible() && !out.admissible() {
        return Err(Error::InvalidInput(
            "convex combination left the control set".into(),
        ));
    }
    Ok(out)
}

/// `E int H_v . (u - v) dt` with its standard error.
pub fn directional_derivative(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle_u: &TrajectoryBundle,
    adjoint: &AdjointPath,
    v: &ControlProcess,
) -> Result<Estimate> {
    let hv = hv_field(spec, ensemble, bundle_u, adjoint)?;
    directional_from_field(ensemble, bundle_u, &hv, v)
}

fn directional_from_field(
    ensemble: &PathEnsemble,
    bundle_u: &TrajectoryBundle,
    hv: &StepArray,
    v: &ControlProcess,
) -> Result<Estimate> {
    if !v.values().same_shape(hv) {
        return Err(Error::Shape(
            "probe control does not match the ensemble".into(),
        ));
    }
    let grid = ensemble.grid();
    Ok(Estimate::from_paths(ensemble.path_count(), |k| {
        (0..ensemble.steps())
            .map(|i| {
                let (g, u, w) = (hv.at(i, k), bundle_u.control.at(i, k), v.at(i, k));
                g.iter()
                    .zip(u)
                    .zip(w)
                    .map(|((g, u), w)| g * (u - w))
                    .sum::<f64>()
                    * grid.step_len(i)
            })
            .sum()
    }))
}

/// `E int |u - P_U(u + H_v)|^2 dt` for a precomputed `H_v` field.
pub fn projection_residual(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    control: &ControlProcess,
    hv: &StepArray,
) -> Estimate {
    let grid = ensemble.grid();
    let m = spec.dims.m;
    Estimate::from_paths(ensemble.path_count(), |k| {
        let mut x = vec![0.0; m];
        let mut proj = vec![0.0; m];
        (0..ensemble.steps())
            .map(|i| {
                let u = control.at(i, k);
                let g = hv.at(i, k);
                for c in 0..m {
                    x[c] = u[c] + g[c];
                }
                spec.control_set.project_into(&x, &mut proj);
                (0..m).map(|c| (u[c] - proj[c]).powi(2)).sum::<f64>() * grid.step_len(i)
            })
            .sum()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub residual: Estimate,
    /// One entry per probe: `E int H_v . (u - v) dt`.
    pub vi_values: Vec<Estimate>,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn check_stationarity(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle_u: &TrajectoryBundle,
    adjoint: &AdjointPath,
    probes: &[ControlProcess],
    tolerance: f64,
) -> Result<StationarityReport> {
    let hv = hv_field(spec, ensemble, bundle_u, adjoint)?;
    let residual = projection_residual(spec, ensemble, &bundle_u.control, &hv);
    let vi_values = probes
        .iter()
        .map(|v| {
            v.require_admissible()?;
            directional_from_field(ensemble, bundle_u, &hv, v)
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = residual.value <= tolerance
        && vi_values
            .iter()
            .all(|e| e.value >= -3.0 * e.stderr - ROUNDOFF_FLOOR);
    Ok(StationarityReport {
        residual,
        vi_values,
        tolerance,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub step_size: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub solver: SolverOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            max_iters: 50,
            tolerance: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStatus {
    Converged,
    MaxIterations,
    /// `J` increased on five consecutive iterations.
    StepSizeTooLarge,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub j: f64,
    pub j_stderr: f64,
    pub residual: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub history: Vec<IterateRecord>,
    pub control: ControlProcess,
    pub bundle: TrajectoryBundle,
    pub adjoint: AdjointPath,
    pub cost: CostBreakdown,
    pub residual: Estimate,
    pub status: OptimizerStatus,
    /// Cost of the transferred control on an independent ensemble.
    pub validation: Option<CostBreakdown>,
}

/// Number of consecutive cost increases that aborts the optimizer.
const MAX_INCREASES: usize = 5;

/// Projected gradient ascent on the Hamiltonian: `u <- P_U(u + gamma H_v)`.
pub fn optimize(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    u0: &ControlProcess,
    options: &OptimizerOptions,
    validation: Option<&PathEnsemble>,
) -> Result<OptimizationResult> {
    let gamma = options.step_size;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step size must be finite and >= 0, got {gamma}"
        )));
    }
    if !(options.tolerance >= 0.0) {
        return Err(Error::InvalidInput("tolerance must be >= 0".into()));
    }
    u0.require_admissible()?;
    let solver = BsdeSolver::new(spec, ensemble, options.solver.clone())?;
    let mut u = u0.clone();
    let mut history = Vec::new();
    let mut increases = 0;
    let mut iter = 0;
    loop {
        let bundle = solver.solve(&u)?;
        let cost = evaluate_cost_direct(spec, ensemble, &bundle)?;
        let adjoint = solve_adjoint(spec, ensemble, &bundle)?;
        let hv = hv_field(spec, ensemble, &bundle, &adjoint)?;
        let residual = projection_residual(spec, ensemble, &u, &hv);
        if let Some(prev) = history.last().map(|r: &IterateRecord| r.j) {
            increases = if cost.j > prev { increases + 1 } else { 0 };
        }
        history.push(IterateRecord {
            iter,
            j: cost.j,
            j_stderr: cost.stderr,
            residual: residual.value,
            step_size: gamma,
        });
        let status = if increases >= MAX_INCREASES {
            Some(OptimizerStatus::StepSizeTooLarge)
        } else if residual.value <= options.tolerance {
            Some(OptimizerStatus::Converged)
        } else if iter >= options.max_iters {
            Some(OptimizerStatus::MaxIterations)
        } else {
            None
        };
        if let Some(status) = status {
            let validation = match validation {
                Some(fresh) => Some(validate_on(spec, &solver, &u, fresh)?),
                None => None,
            };
            return Ok(OptimizationResult {
                history,
                control: u,
                bundle,
                adjoint,
                cost,
                residual,
                status,
                validation,
            });
        }
        let mut next = u.values().clone();
        for (x, g) in next.as_mut_slice().iter_mut().zip(hv.as_slice()) {
            *x += gamma * g;
        }
        u = ControlProcess::projected(next, &spec.control_set)?;
        iter += 1;
    }
}

/// Moves a control to another ensemble by regressing it on `W_{t_i}` at each
/// step, then projecting onto the control set.
pub fn transfer_control(
    spec: &ProblemSpec,
    solver: &BsdeSolver<'_>,
    control: &ControlProcess,
    fresh: &PathEnsemble,
) -> Result<ControlProcess> {
    let m = spec.dims.m;
    if fresh.steps() != solver.ensemble().steps() || fresh.dim() != solver.ensemble().dim() {
        return Err(Error::EnsembleMismatch(
            "validation ensemble has a different grid".into(),
        ));
    }
    let mut values = StepArray::zeros(fresh.steps(), fresh.path_count(), m);
    for i in 0..fresh.steps() {
        let reg = solver.regressors().at(i);
        let fit = reg.fit(control.values().step(i), m)?;
        par::for_each_path(values.step_mut(i), m, |k, out| {
            out.copy_from_slice(&reg.evaluate(&fit, fresh.w(k, i)));
        });
    }
    ControlProcess::projected(values, &spec.control_set)
}

fn validate_on(
    spec: &ProblemSpec,
    solver: &BsdeSolver<'_>,
    control: &ControlProcess,
    fresh: &PathEnsemble,
) -> Result<CostBreakdown> {
    let moved = transfer_control(spec, solver, control, fresh)?;
    let fresh_solver = BsdeSolver::new(spec, fresh, solver.options().clone())?;
    let bundle = fresh_solver.solve(&moved)?;
    evaluate_cost_direct(spec, fresh, &bundle)
}
