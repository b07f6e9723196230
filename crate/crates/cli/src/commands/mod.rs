mod benchmark;
mod cost;
mod optimize;
mod solve;
mod verify;

use std::time::Instant;

use bsmp_core::bsde::{ControlProcess, TrajectoryBundle, ADMISSIBLE_TOL};
use bsmp_core::diagnostics::{doubling_ratio, empirical_norms, NormEstimates};
use bsmp_core::par;
use bsmp_core::registry::{RegisteredModel, TrajectoryOracle};
use bsmp_core::sampling::{sample_ensemble, PathEnsemble, TimeGrid};
use bsmp_core::smp::initial_state_estimate;
use bsmp_core::stats::ROUNDOFF_FLOOR;
use clap::ValueEnum;
use serde::Serialize;

use crate::config::{ControlSpec, RunConfig};
use crate::error::CliError;
use crate::output::{verdict_csv, Cell, Csv, Outputs, Summary, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Solve the state equation for the configured control.
    Solve,
    /// Compare the direct and augmented cost estimators.
    Cost,
    /// Run the projected-gradient optimizer.
    Optimize,
    /// Run every diagnostic.
    Verify,
    /// Run the problems with closed-form solutions end to end.
    Benchmark,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Cost => "cost",
            Command::Optimize => "optimize",
            Command::Verify => "verify",
            Command::Benchmark => "benchmark",
        }
    }
}

/// Scalar results of a subcommand.
#[derive(Debug, Default)]
pub struct Report {
    pub j: Option<f64>,
    pub j_stderr: Option<f64>,
    pub residual: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

/// Runs `command`, writes every output file and returns the summary.
pub fn execute(command: Command, cfg: &RunConfig, threads: usize) -> Result<Summary, CliError> {
    let mut out = Outputs::create(&cfg.output_dir)?;
    out.text("resolved_config.json", &cfg.resolved_json())?;
    out.log(format!("command {}", command.name()));
    out.log(format!("threads {threads}"));
    let start = Instant::now();
    let report = par::with_threads(threads, || match command {
        Command::Solve => solve::run(cfg, &mut out),
        Command::Cost => cost::run(cfg, &mut out),
        Command::Optimize => optimize::run(cfg, &mut out),
        Command::Verify => verify::run(cfg, &mut out),
        Command::Benchmark => benchmark::run(cfg, &mut out),
    });
    let elapsed = start.elapsed().as_secs_f64();
    out.log(format!("runtime_seconds {elapsed:.3}"));
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            out.log(e.line());
            out.finish_log()?;
            return Err(e);
        }
    };
    let model = match command {
        Command::Benchmark => "benchmark".to_string(),
        _ => cfg.model.key.clone(),
    };
    let summary = Summary {
        config_hash: cfg.hash(),
        model,
        j: report.j,
        j_stderr: report.j_stderr,
        residual: report.residual,
        verdicts: report.verdicts,
        runtime_seconds: None,
    };
    for v in summary.verdicts.iter().filter(|v| !v.pass) {
        out.log(format!(
            "failed {} value {} threshold {}",
            v.name, v.value, v.threshold
        ));
    }
    out.csv("checks.csv", &verdict_csv(&summary.verdicts))?;
    out.json("summary.json", &summary)?;
    out.finish_log()?;
    Ok(summary)
}

pub(crate) fn ensemble(
    cfg: &RunConfig,
    model: &RegisteredModel,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble, CliError> {
    let grid =
        TimeGrid::new(cfg.horizon, cfg.steps).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(sample_ensemble(
        &grid,
        model.spec.dims.d,
        paths,
        seed,
        cfg.antithetic,
    )?)
}

/// Constant control value named by `spec`, if it is constant.
fn constant_value(
    spec: &ControlSpec,
    model: &RegisteredModel,
) -> Result<Option<Vec<f64>>, CliError> {
    match spec {
        ControlSpec::Constant { value } => Ok(Some(value.clone())),
        ControlSpec::Oracle => model
            .oracle
            .optimal_control
            .clone()
            .map(Some)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "model {:?} has no closed-form optimal control",
                    model.key
                ))
            }),
        ControlSpec::SinW { .. } => Ok(None),
    }
}

pub(crate) fn build_control(
    spec: &ControlSpec,
    model: &RegisteredModel,
    ens: &PathEnsemble,
) -> Result<ControlProcess, CliError> {
    let set = &model.spec.control_set;
    let m = model.spec.dims.m;
    if let Some(value) = constant_value(spec, model)? {
        if value.len() != m {
            return Err(CliError::Config(format!(
                "control value needs {m} components, got {}",
                value.len()
            )));
        }
        if !set.contains(&value, ADMISSIBLE_TOL) {
            return Err(CliError::Config(format!(
                "control value {value:?} is outside the control set"
            )));
        }
        return Ok(ControlProcess::constant(ens, &value, set)?);
    }
    let ControlSpec::SinW {
        amplitude,
        frequency,
    } = *spec
    else {
        unreachable!("non-constant controls are sin_w")
    };
    let d = ens.dim();
    Ok(ControlProcess::markov(ens, m, set, |_, w, out| {
        let raw: Vec<f64> = (0..m)
            .map(|c| amplitude * (frequency * w[c % d]).sin())
            .collect();
        set.project_into(&raw, out);
    })?)
}

/// Whether `spec` is the model's optimal control.
pub(crate) fn is_oracle_control(spec: &ControlSpec, model: &RegisteredModel) -> bool {
    match (spec, &model.oracle.optimal_control) {
        (ControlSpec::Oracle, Some(_)) => true,
        (ControlSpec::Constant { value }, Some(opt)) => value == opt,
        _ => false,
    }
}

/// `5 SE` plus the model's time-discretization allowance around `target`.
pub(crate) fn oracle_threshold(model: &RegisteredModel, target: f64, stderr: f64) -> f64 {
    5.0 * stderr + model.oracle.time_step_rtol * target.abs() + ROUNDOFF_FLOOR
}

/// `|y_0 - y_0^*| <= 5 SE` (plus discretization allowance) when the closed-form `y_0` applies to `control`.
pub(crate) fn y0_verdict(
    model: &RegisteredModel,
    control: &ControlSpec,
    ens: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Result<Option<Verdict>, CliError> {
    let Some(target) = model.oracle.optimal_y0 else {
        return Ok(None);
    };
    if !(model.oracle.y0_control_free || is_oracle_control(control, model)) {
        return Ok(None);
    }
    let est = initial_state_estimate(&model.spec, ens, bundle)?;
    let e = &est[0];
    Ok(Some(Verdict::at_most(
        "y0_oracle",
        (e.value - target).abs(),
        oracle_threshold(model, target, e.stderr),
    )))
}

/// Compares the solved `(y, z)` with a closed-form solution.
pub(crate) fn trajectory_verdicts(
    oracle: &TrajectoryOracle,
    ens: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Vec<Verdict> {
    let grid = ens.grid();
    let steps = ens.steps();
    let paths = ens.path_count();
    let horizon = grid.horizon();
    let exact = |i: usize, k: usize| oracle.eval(grid.t(i), horizon, ens.w(k, i)[0]);
    match oracle {
        TrajectoryOracle::Constant { .. } => {
            let mut worst = 0.0f64;
            for k in 0..paths {
                for i in 0..=steps {
                    let (y, z) = exact(i, k);
                    worst = worst.max((bundle.y.at(i, k)[0] - y).abs());
                    if i < steps {
                        worst = worst.max((bundle.z.at(i, k)[0] - z).abs());
                    }
                }
            }
            vec![Verdict::at_most("trajectory_exact", worst, 0.0)]
        }
        TrajectoryOracle::Brownian | TrajectoryOracle::Square => {
            let tol = 5.0 * grid.dt().sqrt().max(1.0 / (paths as f64).sqrt());
            let mean_sq = |f: &(dyn Fn(usize, usize) -> f64 + Sync), n_steps: usize| {
                par::sum_paths(paths, |k| {
                    (0..n_steps).map(|i| f(i, k).powi(2)).sum::<f64>()
                }) / (paths * n_steps) as f64
            };
            let rms_y = mean_sq(&|i, k| bundle.y.at(i, k)[0] - exact(i, k).0, steps + 1).sqrt();
            let rms_z = mean_sq(&|i, k| bundle.z.at(i, k)[0] - exact(i, k).1, steps).sqrt();
            vec![
                Verdict::at_most("trajectory_rms_y", rms_y, tol),
                Verdict::at_most("trajectory_rms_z", rms_z, tol),
            ]
        }
        TrajectoryOracle::Exponential { .. } => {
            let worst = (0..=steps)
                .map(|i| {
                    let mean = par::sum_paths(paths, |k| bundle.y.at(i, k)[0]) / paths as f64;
                    let y = exact(i, 0).0;
                    (mean - y).abs() / y.abs()
                })
                .fold(0.0, f64::max);
            vec![Verdict::at_most("trajectory_relative_error", worst, 0.02)]
        }
    }
}

pub(crate) const NORM_EXPONENTS: [f64; 4] = [0.5, 0.9, 1.0, 2.0];
/// Exponents below one whose sup-norm moments must stay stable under doubling.
pub(crate) const STABLE_EXPONENTS: [f64; 2] = [0.5, 0.9];
/// Doubling ratio above which a moment estimate is flagged as not converging.
pub(crate) const UNSTABLE_RATIO: f64 = 1.5;
pub(crate) const STABLE_RATIO: (f64, f64) = (0.8, 1.25);

#[derive(Debug, Serialize)]
pub(crate) struct NormsBlock {
    process: &'static str,
    paths: usize,
    doubled_paths: usize,
    base: NormEstimates,
    doubled: NormEstimates,
    /// `(p, doubled / base)` for the sup-norm moments.
    sp_ratio: Vec<(f64, f64)>,
    mp_ratio: Vec<(f64, f64)>,
    class_d_ratio: f64,
    /// `(p, ratio > 1.5)`: the moment keeps growing with the sample.
    sp_unstable: Vec<(f64, bool)>,
    terminal_in_l1_only: bool,
}

/// Norms of `y` on the ensemble and on its doubled extension (the first
/// `P` paths of the doubled ensemble coincide with the base ensemble).
pub(crate) fn norms_block(
    cfg: &RunConfig,
    model: &RegisteredModel,
    control: &ControlSpec,
    ens: &PathEnsemble,
    bundle: &TrajectoryBundle,
) -> Result<(NormsBlock, Vec<Verdict>), CliError> {
    let spec = &model.spec;
    let big = ensemble(cfg, model, 2 * ens.path_count(), ens.seed())?;
    let solver = bsmp_core::bsde::BsdeSolver::new(spec, &big, cfg.solver_options())?;
    let big_bundle = solver.solve(&build_control(control, model, &big)?)?;
    let base = empirical_norms(&bundle.y, ens.grid(), &NORM_EXPONENTS)?;
    let doubled = empirical_norms(&big_bundle.y, big.grid(), &NORM_EXPONENTS)?;
    let ratios = |a: &[(f64, f64)], b: &[(f64, f64)]| -> Vec<(f64, f64)> {
        a.iter()
            .zip(b)
            .map(|((p, x), (_, y))| (*p, doubling_ratio(*x, *y)))
            .collect()
    };
    let sp_ratio = ratios(&base.sp, &doubled.sp);
    let mp_ratio = ratios(&base.mp, &doubled.mp);
    let class_d_ratio = doubling_ratio(base.class_d_proxy, doubled.class_d_proxy);
    let sp_unstable = sp_ratio
        .iter()
        .map(|(p, r)| (*p, *r > UNSTABLE_RATIO))
        .collect();
    let mut verdicts = vec![
        Verdict::new("norms_finite", 0.0, 0.0, base.finite && doubled.finite),
        Verdict::within(
            "class_d_doubling_ratio",
            class_d_ratio,
            STABLE_RATIO.0,
            STABLE_RATIO.1,
        ),
    ];
    for (p, r) in sp_ratio
        .iter()
        .filter(|(p, _)| STABLE_EXPONENTS.contains(p))
    {
        verdicts.push(Verdict::within(
            format!("sp_norm_{p}_doubling_ratio"),
            *r,
            STABLE_RATIO.0,
            STABLE_RATIO.1,
        ));
    }
    let block = NormsBlock {
        process: "y",
        paths: ens.path_count(),
        doubled_paths: big.path_count(),
        base,
        doubled,
        sp_ratio,
        mp_ratio,
        class_d_ratio,
        sp_unstable,
        terminal_in_l1_only: spec.assumptions.terminal_in_l1_only,
    };
    Ok((block, verdicts))
}

/// Per-step mean and variance of each component of `y`.
pub(crate) fn moments_csv(ens: &PathEnsemble, bundle: &TrajectoryBundle) -> Csv {
    let n = bundle.y.width();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=n).map(|a| format!("mean_y{a}")));
    header.extend((1..=n).map(|a| format!("var_y{a}")));
    let mut csv = Csv::new(&header);
    for (i, (mean, var)) in bundle.step_moments().into_iter().enumerate() {
        let mut row: Vec<Cell> = vec![i.into(), ens.grid().t(i).into()];
        row.extend(mean.into_iter().map(Cell::from));
        row.extend(var.into_iter().map(Cell::from));
        csv.row(row);
    }
    csv
}
