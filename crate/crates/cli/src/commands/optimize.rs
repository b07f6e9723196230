use bsmp_core::bsde::ControlProcess;
use bsmp_core::smp::{optimize, CostBreakdown, OptimizerStatus};
use bsmp_core::stats::{Estimate, ROUNDOFF_FLOOR};
use serde::Serialize;

use super::{build_control, ensemble, Report};
use crate::config::{ControlSpec, RunConfig};
use crate::error::CliError;
use crate::output::{Cell, Csv, Outputs, Verdict};

/// Distance and cost tolerance against a closed-form optimum.
const ORACLE_TOL: f64 = 0.02;

#[derive(Serialize)]
struct OptimizeReport {
    status: OptimizerStatus,
    iterations: usize,
    cost: CostBreakdown,
    residual: Estimate,
    validation: Option<CostBreakdown>,
    /// `(E int |u - u*|^2 dt)^{1/2}` when the optimum is known.
    oracle_distance: Option<f64>,
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    let spec = &model.spec;
    let ens = ensemble(cfg, &model, cfg.paths, cfg.seed)?;
    let fresh = ensemble(cfg, &model, cfg.paths, cfg.validation_seed())?;
    let u0 = build_control(&cfg.optimizer.u0, &model, &ens)?;
    let res = optimize(spec, &ens, &u0, &cfg.optimizer_options(), Some(&fresh))?;
    let iterations = res.history.last().map_or(0, |r| r.iter);
    out.log(format!(
        "optimizer status {:?} after {iterations} iterations",
        res.status
    ));

    let mut history = Csv::new(&["iter", "J", "J_stderr", "residual", "step_size"]);
    for r in &res.history {
        history.row(vec![
            r.iter.into(),
            r.j.into(),
            r.j_stderr.into(),
            r.residual.into(),
            r.step_size.into(),
        ]);
    }
    out.csv("history.csv", &history)?;
    out.csv(
        "control_moments.csv",
        &control_moments(&res.control, ens.grid().nodes()),
    )?;

    let mut verdicts = vec![Verdict::new(
        "optimizer_converged",
        res.residual.value,
        cfg.optimizer.tolerance,
        res.status == OptimizerStatus::Converged,
    )];
    let validation = res
        .validation
        .clone()
        .expect("validation ensemble supplied");
    let mut oracle_distance = None;
    if let (Some(_), Some(target)) = (&model.oracle.optimal_control, model.oracle.optimal_cost) {
        let best = build_control(&ControlSpec::Oracle, &model, &ens)?;
        let dist = res.control.l2_distance_sq(&best, ens.grid()).sqrt();
        oracle_distance = Some(dist);
        verdicts.push(Verdict::at_most(
            "control_oracle_distance",
            dist,
            ORACLE_TOL,
        ));
        verdicts.push(Verdict::at_most(
            "cost_oracle",
            (res.cost.j - target).abs(),
            ORACLE_TOL,
        ));
        verdicts.push(Verdict::at_most(
            "validation_cost_oracle",
            (validation.j - target).abs(),
            ORACLE_TOL,
        ));
    } else {
        let se = res.cost.estimate().combined_stderr(&validation.estimate());
        verdicts.push(Verdict::at_most(
            "validation_consistency",
            (res.cost.j - validation.j).abs(),
            5.0 * se + ROUNDOFF_FLOOR,
        ));
    }

    let report = Report {
        j: Some(res.cost.j),
        j_stderr: Some(res.cost.stderr),
        residual: Some(res.residual.value),
        verdicts,
    };
    out.json(
        "optimize.json",
        &OptimizeReport {
            status: res.status,
            iterations,
            cost: res.cost,
            residual: res.residual,
            validation: Some(validation),
            oracle_distance,
        },
    )?;
    Ok(report)
}

fn control_moments(control: &ControlProcess, nodes: &[f64]) -> Csv {
    let m = control.dim();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=m).map(|c| format!("mean_u{c}")));
    header.extend((1..=m).map(|c| format!("var_u{c}")));
    let mut csv = Csv::new(&header);
    for (i, (mean, var)) in control.step_moments().into_iter().enumerate() {
        let mut row: Vec<Cell> = vec![i.into(), nodes[i].into()];
        row.extend(mean.into_iter().map(Cell::from));
        row.extend(var.into_iter().map(Cell::from));
        csv.row(row);
    }
    csv
}
