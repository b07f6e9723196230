//! Convergence tables in the perturbation size, the first-order expansion of
//! the cost, the adjoint duality identity and empirical path norms.

use serde::Serialize;

use crate::adjoint::{hv_field, AdjointPath, HamiltonianWork};
use crate::array::StepArray;
use crate::bsde::{
    solve_difference, BsdeSolver, ControlProcess, TrajectoryBundle, VariationalSolution,
};
use crate::model::{CostGrad, ProblemSpec};
use crate::sampling::{PathEnsemble, TimeGrid};
use crate::smp::{directional_derivative, perturb};
use crate::stats::{ls_slope, Estimate, ROUNDOFF_FLOOR};
use crate::{par, Error, Result};

pub const DEFAULT_THETA_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Hitting levels of `|X|` used by the class (D) proxy.
pub const HITTING_LEVELS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Values of one metric along a decreasing grid of perturbation sizes.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub name: String,
    pub theta_grid: Vec<f64>,
    pub values: Vec<Estimate>,
    /// Least-squares slope of `log(value)` against `log(theta)`; `None` when
    /// some value is zero.
    pub slope: Option<f64>,
    /// Values do not increase as theta shrinks (each step allowed one standard error).
    pub monotone: bool,
}

impl ConvergenceTable {
    pub fn new(name: &str, theta_grid: &[f64], values: Vec<Estimate>) -> Result<Self> {
        validate_theta_grid(theta_grid)?;
        if values.len() != theta_grid.len() {
            return Err(Error::Shape("one value per theta expected".into()));
        }
        let slope = if values.iter().all(|e| e.value > 0.0) {
            let xs: Vec<f64> = theta_grid.iter().map(|t| t.ln()).collect();
            let ys: Vec<f64> = values.iter().map(|e| e.value.ln()).collect();
            Some(ls_slope(&xs, &ys))
        } else {
            None
        };
        let monotone = values
            .windows(2)
            .all(|w| w[1].value <= w[0].value + w[0].stderr.max(w[1].stderr) + ROUNDOFF_FLOOR);
        Ok(Self {
            name: name.to_string(),
            theta_grid: theta_grid.to_vec(),
            values,
            slope,
            monotone,
        })
    }

    /// Every value is at most `bound`.
    pub fn all_below(&self, bound: f64) -> bool {
        self.values.iter().all(|e| e.value <= bound)
    }

    pub fn all_zero(&self) -> bool {
        self.values.iter().all(|e| e.value == 0.0)
    }
}

pub fn validate_theta_grid(theta: &[f64]) -> Result<()> {
    if theta.len() < 2 {
        return Err(Error::InvalidInput(
            "theta grid needs at least two values".into(),
        ));
    }
    if theta.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::InvalidInput(
            "theta values must lie in (0, 1]".into(),
        ));
    }
    if theta.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "theta grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Distance of perturbed states from the base state.
#[derive(Clone, Debug, Serialize)]
pub struct StateSensitivity {
    /// `max_i E|y^theta_i - y^u_i|^2`.
    pub sup_y: ConvergenceTable,
    /// `E int |z^theta - z^u|^2 dt`.
    pub int_z: ConvergenceTable,
}

pub fn state_sensitivity_table(
    solver: &BsdeSolver<'_>,
    u: &ControlProcess,
    v: &ControlProcess,
    theta_grid: &[f64],
) -> Result<StateSensitivity> {
    validate_theta_grid(theta_grid)?;
    let spec = solver.spec();
    let base = solver.solve(u)?;
    let mut sup_y = Vec::new();
    let mut int_z = Vec::new();
    for &theta in theta_grid {
        let ut = perturb(u, v, theta, &spec.control_set)?;
        let bt = solver.solve(&ut)?;
        let diff = solve_difference(spec, solver.ensemble(), &bt, &base)?;
        sup_y.push(diff.sup_y);
        int_z.push(diff.int_z);
    }
    Ok(StateSensitivity {
        sup_y: ConvergenceTable::new("sup_y_sq", theta_grid, sup_y)?,
        int_z: ConvergenceTable::new("int_z_sq", theta_grid, int_z)?,
    })
}

/// Remainder of the first-order expansion of the state.
#[derive(Clone, Debug, Serialize)]
pub struct ExpansionRemainder {
    /// `E|Y_0 - (y^theta_0 - y^u_0) / theta|^2`.
    pub initial: ConvergenceTable,
    /// `max_i E|Y_i - (y^theta_i - y^u_i) / theta|^2`.
    pub sup: ConvergenceTable,
    /// `E int |Z - (z^theta - z^u) / theta|^2 dt`.
    pub int_z: ConvergenceTable,
}

impl ExpansionRemainder {
    pub fn tables(&self) -> [&ConvergenceTable; 3] {
        [&self.initial, &self.sup, &self.int_z]
    }
}

pub fn expansion_remainder_table(
    solver: &BsdeSolver<'_>,
    u: &ControlProcess,
    v: &ControlProcess,
    theta_grid: &[f64],
) -> Result<ExpansionRemainder> {
    validate_theta_grid(theta_grid)?;
    let spec = solver.spec();
    let ensemble = solver.ensemble();
    let paths = ensemble.path_count();
    let grid = ensemble.grid();
    let base = solver.solve(u)?;
    let var = solver.solve_variational(&base, v)?;
    let (mut initial, mut sup, mut int_z) = (Vec::new(), Vec::new(), Vec::new());
    for &theta in theta_grid {
        let ut = perturb(u, v, theta, &spec.control_set)?;
        let bt = solver.solve(&ut)?;
        let phi = remainder(&var.y, &bt.y, &base.y, theta);
        let psi = remainder(&var.z, &bt.z, &base.z, theta);
        let sq = |a: &StepArray, i: usize, k: usize| a.at(i, k).iter().map(|x| x * x).sum::<f64>();
        initial.push(Estimate::from_paths(paths, |k| sq(&phi, 0, k)));
        let mut worst = Estimate::exact(0.0);
        for i in 0..phi.steps() {
            let e = Estimate::from_paths(paths, |k| sq(&phi, i, k));
            if e.value > worst.value {
                worst = e;
            }
        }
        sup.push(worst);
        int_z.push(Estimate::from_paths(paths, |k| {
            (0..psi.steps())
                .map(|i| sq(&psi, i, k) * grid.step_len(i))
                .sum()
        }));
    }
    Ok(ExpansionRemainder {
        initial: ConvergenceTable::new("phi0_sq", theta_grid, initial)?,
        sup: ConvergenceTable::new("sup_phi_sq", theta_grid, sup)?,
        int_z: ConvergenceTable::new("int_psi_sq", theta_grid, int_z)?,
    })
}

fn remainder(lin: &StepArray, pert: &StepArray, base: &StepArray, theta: f64) -> StepArray {
    let mut out = lin.clone();
    for ((o, a), b) in out
        .as_mut_slice()
        .iter_mut()
        .zip(pert.as_slice())
        .zip(base.as_slice())
    {
        *o -= (a - b) / theta;
    }
    out
}

/// Per-path `Y_N - sum_i (b_y Y + b_z Z + b_v d) dt`, a noisy copy of `Y_0`,
/// and the running part `sum_i (h_y Y + h_z Z + h_v d) dt`.
fn variational_samples(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle: &TrajectoryBundle,
    var: &VariationalSolution,
) -> (Vec<f64>, Vec<f64>) {
    let dims = spec.dims;
    let (n, m) = (dims.n, dims.m);
    let grid = ensemble.grid();
    let model = spec.model.as_ref();
    let steps = ensemble.steps();
    let w = n + 1;
    let mut out = vec![0.0; ensemble.path_count() * w];
    par::for_each_path(&mut out, w, |k, row| {
        let mut dg = crate::model::DriverGrad::zeros(dims);
        let mut cg = CostGrad::zeros(dims);
        let mut lin = vec![0.0; n];
        row[..n].copy_from_slice(var.y.at(steps, k));
        let mut run = 0.0;
        for i in 0..steps {
            let (t, dt) = (grid.t(i), grid.step_len(i));
            let (y, z, u) = (
                bundle.y.at(i, k),
                bundle.z.at(i, k),
                bundle.control.at(i, k),
            );
            let (yy, zz, dd) = (var.y.at(i, k), var.z.at(i, k), var.direction.at(i, k));
            dg.clear();
            cg.clear();
            model.driver_grad(t, y, z, u, &mut dg);
            model.running_cost_grad(t, y, z, u, &mut cg);
            spec.apply_bz(&dg.bz, zz, &mut lin);
            for a in 0..n {
                let mut s = lin[a];
                for c in 0..n {
                    s += dg.by[a * n + c] * yy[c];
                }
                for c in 0..m {
                    s += dg.bv[a * m + c] * dd[c];
                }
                row[a] -= s * dt;
            }
            let r = dot(&cg.hy, yy) + dot(&cg.hz, zz) + dot(&cg.hv, dd);
            run += r * dt;
        }
        row[n] = run;
    });
    let paths = ensemble.path_count();
    let proxy: Vec<f64> = (0..paths)
        .flat_map(|k| out[k * w..k * w + n].to_vec())
        .collect();
    let running: Vec<f64> = (0..paths).map(|k| out[k * w + n]).collect();
    (proxy, running)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `E[g_y(y_0) . Y_0] + E int (h_y Y + h_z Z + h_v (v - u)) dt`: the derivative
/// of the cost in the direction carried by `var`.
pub fn cost_expansion(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle_u: &TrajectoryBundle,
    var: &VariationalSolution,
) -> Result<Estimate> {
    bundle_u.check_ensemble(ensemble)?;
    if var.ensemble != ensemble.id() {
        return Err(Error::EnsembleMismatch(
            "variational solution on another ensemble".into(),
        ));
    }
    let n = spec.dims.n;
    let paths = ensemble.path_count();
    let model = spec.model.as_ref();
    let (proxy, running) = variational_samples(spec, ensemble, bundle_u, var);
    let pm: Vec<f64> = (0..n)
        .map(|a| par::sum_paths(paths, |k| proxy[k * n + a]) / paths as f64)
        .collect();
    let mut exact = vec![0.0; paths];
    let mut noisy = vec![0.0; paths];
    let mut pair = vec![0.0; paths * 2];
    par::for_each_path(&mut pair, 2, |k, out| {
        let mut gy = vec![0.0; n];
        model.initial_cost_grad(bundle_u.y.at(0, k), &mut gy);
        let first = dot(&gy, var.y.at(0, k));
        let corr: f64 = (0..n).map(|a| gy[a] * (proxy[k * n + a] - pm[a])).sum();
        out[0] = first + running[k];
        out[1] = first + corr + running[k];
    });
    for k in 0..paths {
        exact[k] = pair[2 * k];
        noisy[k] = pair[2 * k + 1];
    }
    let value = par::sum_paths(paths, |k| exact[k]) / paths as f64;
    let stderr = Estimate::from_paths(paths, |k| noisy[k]).stderr;
    Ok(Estimate { value, stderr })
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    /// `E[S_T]`, `S_T = sum_i sum_j (H_z[:, j] . Y_i - p_i . Z_i[:, j]) dW_ij`.
    pub s_t: Estimate,
    /// The cost expansion evaluated through `(Y, Z)`.
    pub expansion: Estimate,
    /// `E int H_v . (u - v) dt` evaluated through the adjoint.
    pub gradient: Estimate,
    /// `expansion - gradient`.
    pub gap: f64,
    pub gap_stderr: f64,
    /// Mean of the pathwise discrete product-rule remainder
    /// `-p_0 . Y_0 - sum (h_y Y + h_z Z + p . b_v d) dt + S_T`; zero in continuous time.
    pub ito_residual: Estimate,
    pub s_t_pass: bool,
    pub gap_pass: bool,
}

impl DualityReport {
    pub fn pass(&self) -> bool {
        self.s_t_pass && self.gap_pass
    }
}

pub fn duality_check(
    spec: &ProblemSpec,
    ensemble: &PathEnsemble,
    bundle_u: &TrajectoryBundle,
    adjoint: &AdjointPath,
    var: &VariationalSolution,
) -> Result<DualityReport> {
    let expansion = cost_expansion(spec, ensemble, bundle_u, var)?;
    let probe = match &var.probe {
        Some(v) => v.clone(),
        None => {
            // direction given directly: rebuild v = u + d
            let mut vals = bundle_u.control.values().clone();
            for (x, d) in vals.as_mut_slice().iter_mut().zip(var.direction.as_slice()) {
                *x += d;
            }
            ControlProcess::new(vals, &spec.control_set)?
        }
    };
    let gradient = if probe.admissible() {
        directional_derivative(spec, ensemble, bundle_u, adjoint, &probe)?
    } else {
        let hv = hv_field(spec, ensemble, bundle_u, adjoint)?;
        let grid = ensemble.grid();
        Estimate::from_paths(ensemble.path_count(), |k| {
            (0..ensemble.steps())
                .map(|i| -dot(hv.at(i, k), var.direction.at(i, k)) * grid.step_len(i))
                .sum()
        })
    };

    let dims = spec.dims;
    let (n, d, m) = (dims.n, dims.d, dims.m);
    let grid = ensemble.grid();
    let model = spec.model.as_ref();
    let paths = ensemble.path_count();
    let mut sr = vec![0.0; paths * 2];
    par::for_each_path(&mut sr, 2, |k, out| {
        let mut work = HamiltonianWork::new(dims);
        let mut dg = crate::model::DriverGrad::zeros(dims);
        let mut cg = CostGrad::zeros(dims);
        let mut s = 0.0;
        let mut a_int = 0.0;
        for i in 0..ensemble.steps() {
            let (t, dt) = (grid.t(i), grid.step_len(i));
            let (y, z, u, p) = (
                bundle_u.y.at(i, k),
                bundle_u.z.at(i, k),
                bundle_u.control.at(i, k),
                adjoint.p.at(i, k),
            );
            let (yy, zz, dd) = (var.y.at(i, k), var.z.at(i, k), var.direction.at(i, k));
            let dw = ensemble.dw(k, i);
            let e = work.eval(spec, t, y, z, u, p);
            for j in 0..d {
                let mut c = 0.0;
                for a in 0..n {
                    c += e.hz[a * d + j] * yy[a] - p[a] * zz[a * d + j];
                }
                s += c * dw[j];
            }
            dg.clear();
            cg.clear();
            model.driver_grad(t, y, z, u, &mut dg);
            model.running_cost_grad(t, y, z, u, &mut cg);
            let mut pbv = 0.0;
            for a in 0..n {
                for c in 0..m {
                    pbv += p[a] * dg.bv[a * m + c] * dd[c];
                }
            }
            a_int += (dot(&cg.hy, yy) + dot(&cg.hz, zz) + pbv) * dt;
        }
        out[0] = s;
        out[1] = -dot(adjoint.p.at(0, k), var.y.at(0, k)) - a_int + s;
    });
    let s_t = Estimate::from_paths(paths, |k| sr[2 * k]);
    let ito_residual = Estimate::from_paths(paths, |k| sr[2 * k + 1]);
    let gap = expansion.value - gradient.value;
    let gap_stderr = expansion.combined_stderr(&gradient);
    let s_t_pass = s_t.is_zero_within(3.0, ROUNDOFF_FLOOR);
    let gap_pass = gap.abs() <= 3.0 * gap_stderr + ito_residual.value.abs() + ROUNDOFF_FLOOR;
    Ok(DualityReport {
        s_t,
        expansion,
        gradient,
        gap,
        gap_stderr,
        ito_residual,
        s_t_pass,
        gap_pass,
    })
}

/// Empirical path-space norms of a process sampled on the grid.
#[derive(Clone, Debug, Serialize)]
pub struct NormEstimates {
    /// `(p, E[max_i |X_i|^p]^{min(1, 1/p)})`.
    pub sp: Vec<(f64, f64)>,
    /// `(p, E[(sum_i |X_i|^2 dt)^{p/2}]^{min(1, 1/p)})`.
    pub mp: Vec<(f64, f64)>,
    /// `max_i E|X_i|`.
    pub class_d_grid: f64,
    /// `max_L E|X_{tau_L}|` over first hitting times of the levels, capped at `T`.
    pub class_d_hitting: f64,
    /// Larger of the two; a lower bound for the sup over stopping times.
    pub class_d_proxy: f64,
    pub finite: bool,
}

impl NormEstimates {
    pub fn sp_norm(&self, p: f64) -> Option<f64> {
        self.sp.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }

    pub fn mp_norm(&self, p: f64) -> Option<f64> {
        self.mp.iter().find(|(q, _)| *q == p).map(|(_, v)| *v)
    }
}

pub fn empirical_norms(
    process: &StepArray,
    grid: &TimeGrid,
    p_list: &[f64],
) -> Result<NormEstimates> {
    let paths = process.paths();
    let steps = process.steps();
    if paths == 0 || steps == 0 || process.width() == 0 {
        return Err(Error::InvalidInput("empty process".into()));
    }
    if steps != grid.steps() + 1 {
        return Err(Error::Shape(
            "process must have one value per grid node".into(),
        ));
    }
    if p_list.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidInput(
            "norm exponents must be positive".into(),
        ));
    }
    let abs = |i: usize, k: usize| process.at(i, k).iter().map(|x| x * x).sum::<f64>().sqrt();
    let pf = paths as f64;
    let sups: Vec<f64> = (0..paths)
        .map(|k| (0..steps).map(|i| abs(i, k)).fold(0.0, f64::max))
        .collect();
    let quad: Vec<f64> = (0..paths)
        .map(|k| {
            (0..grid.steps())
                .map(|i| abs(i, k).powi(2) * grid.step_len(i))
                .sum()
        })
        .collect();
    let sp = p_list
        .iter()
        .map(|&p| {
            (
                p,
                (par::sum_paths(paths, |k| sups[k].powf(p)) / pf).powf(1f64.min(1.0 / p)),
            )
        })
        .collect();
    let mp = p_list
        .iter()
        .map(|&p| {
            (
                p,
                (par::sum_paths(paths, |k| quad[k].powf(p / 2.0)) / pf).powf(1f64.min(1.0 / p)),
            )
        })
        .collect::<Vec<_>>();
    let class_d_grid = (0..steps)
        .map(|i| par::sum_paths(paths, |k| abs(i, k)) / pf)
        .fold(0.0, f64::max);
    let class_d_hitting = HITTING_LEVELS
        .iter()
        .map(|&level| {
            par::sum_paths(paths, |k| {
                let tau = (0..steps)
                    .find(|&i| abs(i, k) >= level)
                    .unwrap_or(steps - 1);
                abs(tau, k)
            }) / pf
        })
        .fold(0.0, f64::max);
    let class_d_proxy = class_d_grid.max(class_d_hitting);
    let sp: Vec<(f64, f64)> = sp;
    let finite =
        sp.iter().chain(mp.iter()).all(|(_, v)| v.is_finite()) && class_d_proxy.is_finite();
    Ok(NormEstimates {
        sp,
        mp,
        class_d_grid,
        class_d_hitting,
        class_d_proxy,
        finite,
    })
}

/// `large / small`, the growth of an estimate when the sample is doubled.
pub fn doubling_ratio(small: f64, large: f64) -> f64 {
    large / small
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::adjoint::solve_adjoint;
    use crate::bsde::SolverOptions;
    use crate::model::{AssumptionProfile, ControlSet, Dimensions, FnModel};
    use crate::sampling::sample_ensemble;

    fn spec_with(model: FnModel, set: ControlSet) -> ProblemSpec {
        ProblemSpec::new(
            Dimensions::new(1, 1, 1).unwrap(),
            Arc::new(model),
            set,
            1.0,
            AssumptionProfile::default(),
        )
        .unwrap()
    }

    fn lq() -> ProblemSpec {
        spec_with(
            FnModel {
                driver: Box::new(|_, _, _, v, out| out[0] = v[0]),
                driver_grad: Box::new(|_, _, _, _, g| g.bv[0] = 1.0),
                running_cost: Box::new(|_, _, _, v| 0.5 * v[0] * v[0]),
                running_cost_grad: Box::new(|_, _, _, v, g| g.hv[0] = v[0]),
                initial_cost: Box::new(|y| 0.5 * y[0]),
                initial_cost_grad: Box::new(|_, out| out[0] = 0.5),
                terminal: Box::new(|w, out| out[0] = w[0]),
            },
            ControlSet::interval(-2.0, 2.0),
        )
    }

    fn nonlinear() -> ProblemSpec {
        spec_with(
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
            },
            ControlSet::interval(-1.0, 1.0),
        )
    }

    fn ens(p: usize, n: usize, seed: u64) -> PathEnsemble {
        sample_ensemble(&TimeGrid::new(1.0, n).unwrap(), 1, p, seed, false).unwrap()
    }

    fn constant(spec: &ProblemSpec, e: &PathEnsemble, c: f64) -> ControlProcess {
        ControlProcess::constant(e, &[c], &spec.control_set).unwrap()
    }

    #[test]
    fn theta_grid_validation() {
        assert!(validate_theta_grid(&DEFAULT_THETA_GRID).is_ok());
        assert!(validate_theta_grid(&[0.1, 0.2]).is_err());
        assert!(validate_theta_grid(&[1.5, 0.2]).is_err());
        assert!(validate_theta_grid(&[0.2]).is_err());
    }

    #[test]
    fn tables_vanish_in_the_null_direction() {
        let spec = nonlinear();
        let e = ens(1000, 20, 1);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let u = constant(&spec, &e, 0.3);
        let t4 = state_sensitivity_table(&solver, &u, &u, &DEFAULT_THETA_GRID).unwrap();
        assert!(t4.sup_y.all_zero() && t4.int_z.all_zero());
        let t5 = expansion_remainder_table(&solver, &u, &u, &DEFAULT_THETA_GRID).unwrap();
        assert!(t5.tables().iter().all(|t| t.all_zero()));
    }

    #[test]
    fn control_free_dynamics_give_zero_tables() {
        let spec = spec_with(
            FnModel {
                terminal: Box::new(|w, out| out[0] = w[0]),
                ..FnModel::scalar()
            },
            ControlSet::interval(-1.0, 1.0),
        );
        let e = ens(500, 10, 2);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let t = state_sensitivity_table(
            &solver,
            &constant(&spec, &e, 0.0),
            &constant(&spec, &e, 1.0),
            &DEFAULT_THETA_GRID,
        )
        .unwrap();
        assert!(t.sup_y.all_zero() && t.int_z.all_zero());
    }

    #[test]
    fn lq_state_gap_is_quadratic_in_theta() {
        let spec = lq();
        let e = ens(2000, 50, 3);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let t = state_sensitivity_table(
            &solver,
            &constant(&spec, &e, 0.0),
            &constant(&spec, &e, 1.0),
            &DEFAULT_THETA_GRID,
        )
        .unwrap();
        for (theta, v) in t.sup_y.theta_grid.iter().zip(&t.sup_y.values) {
            assert!((v.value - theta * theta).abs() < 1e-10);
        }
        assert!((t.sup_y.slope.unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn lq_expansion_is_exact() {
        let spec = lq();
        let e = ens(2000, 50, 4);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let t = expansion_remainder_table(
            &solver,
            &constant(&spec, &e, 0.0),
            &constant(&spec, &e, 1.0),
            &DEFAULT_THETA_GRID,
        )
        .unwrap();
        for table in t.tables() {
            assert!(table.all_below(1e-20), "{table:?}");
        }
    }

    #[test]
    fn nonlinear_remainder_shrinks() {
        let spec = nonlinear();
        let e = ens(4000, 50, 5);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let t = expansion_remainder_table(
            &solver,
            &constant(&spec, &e, -0.5),
            &constant(&spec, &e, 0.8),
            &DEFAULT_THETA_GRID,
        )
        .unwrap();
        for table in t.tables() {
            assert!(table.monotone, "{table:?}");
        }
        let t4 = state_sensitivity_table(
            &solver,
            &constant(&spec, &e, -0.5),
            &constant(&spec, &e, 0.8),
            &DEFAULT_THETA_GRID,
        )
        .unwrap();
        assert!(t4.sup_y.slope.unwrap() >= 0.9);
    }

    #[test]
    fn lq_cost_expansion_values() {
        let spec = lq();
        let e = ens(10_000, 50, 6);
        let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
        let opt = solver.solve(&constant(&spec, &e, 0.5)).unwrap();
        for c in [-1.0, 0.0, 1.7] {
            let var = solver
                .solve_variational(&opt, &constant(&spec, &e, c))
                .unwrap();
            let v = cost_expansion(&spec, &e, &opt, &var).unwrap();
            assert!(v.is_zero_within(3.0, ROUNDOFF_FLOOR), "{v:?}");
        }
        let same = solver.solve_variational(&opt, &opt.control).unwrap();
        assert_eq!(cost_expansion(&spec, &e, &opt, &same).unwrap().value, 0.0);

        let zero = solver.solve(&constant(&spec, &e, 0.0)).unwrap();
        let var = solver
            .solve_variational(&zero, &constant(&spec, &e, 0.5))
            .unwrap();
        let v = cost_expansion(&spec, &e, &zero, &var).unwrap();
        assert!(
            (v.value + 0.25).abs() <= 4.0 * v.stderr + ROUNDOFF_FLOOR,
            "{v:?}"
        );
    }

    #[test]
    fn duality_identity_holds() {
        for spec in [lq(), nonlinear()] {
            let e = ens(10_000, 50, 7);
            let solver = BsdeSolver::new(&spec, &e, SolverOptions::default()).unwrap();
            let base = solver.solve(&constant(&spec, &e, 0.2)).unwrap();
            let adj = solve_adjoint(&spec, &e, &base).unwrap();
            let var = solver
                .solve_variational(&base, &constant(&spec, &e, -0.6))
                .unwrap();
            let rep = duality_check(&spec, &e, &base, &adj, &var).unwrap();
            assert!(rep.pass(), "{rep:?}");
            // the pathwise identity expansion - gradient = E[S] - E[R] is exact up to roundoff
            assert!((rep.gap - (rep.s_t.value - rep.ito_residual.value)).abs() < 1e-9);

            let same = solver.solve_variational(&base, &base.control).unwrap();
            let rep0 = duality_check(&spec, &e, &base, &adj, &same).unwrap();
            assert_eq!(rep0.s_t.value, 0.0);
        }
    }

    #[test]
    fn norms_of_constant_process() {
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let x = StepArray::filled(11, 50, 1, 1.0);
        let n = empirical_norms(&x, &grid, &[0.5, 1.0, 2.0]).unwrap();
        for p in [0.5, 1.0, 2.0] {
            assert!((n.sp_norm(p).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((n.mp_norm(2.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(n.class_d_proxy, 1.0);
        assert!(n.finite);
        assert!(empirical_norms(&StepArray::zeros(11, 0, 1), &grid, &[1.0]).is_err());
    }

    #[test]
    fn brownian_sup_norm_is_stable_under_doubling() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let norm = |p: usize, seed: u64| {
            let e = sample_ensemble(&grid, 1, p, seed, false).unwrap();
            let mut x = StepArray::zeros(51, p, 1);
            for k in 0..p {
                for i in 0..=50 {
                    x.at_mut(i, k)[0] = e.w(k, i)[0];
                }
            }
            empirical_norms(&x, &grid, &[2.0])
                .unwrap()
                .sp_norm(2.0)
                .unwrap()
        };
        let r = doubling_ratio(norm(5000, 1), norm(10_000, 2));
        assert!((0.8..=1.25).contains(&r), "{r}");
    }
}
