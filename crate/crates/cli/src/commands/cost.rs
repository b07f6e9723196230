use bsmp_core::bsde::BsdeSolver;
use bsmp_core::smp::{augmented_cost, evaluate_cost_direct, CostBreakdown};
use bsmp_core::stats::ROUNDOFF_FLOOR;
use serde::Serialize;

use super::{build_control, ensemble, is_oracle_control, oracle_threshold, Report};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Outputs, Verdict};

#[derive(Serialize)]
struct CostComparison {
    direct: CostBreakdown,
    augmented: CostBreakdown,
    difference: f64,
    combined_stderr: f64,
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    let spec = &model.spec;
    let ens = ensemble(cfg, &model, cfg.paths, cfg.seed)?;
    let solver = BsdeSolver::new(spec, &ens, cfg.solver_options())?;
    let bundle = solver.solve(&build_control(&cfg.control, &model, &ens)?)?;
    let direct = evaluate_cost_direct(spec, &ens, &bundle)?;
    let augmented = augmented_cost(&solver, &bundle, 0.0)?;
    let se = direct.estimate().combined_stderr(&augmented.estimate());
    let difference = direct.j - augmented.j;

    let mut verdicts = vec![Verdict::at_most(
        "cost_duality",
        difference.abs(),
        5.0 * se + ROUNDOFF_FLOOR,
    )];
    if let (true, Some(target)) = (
        is_oracle_control(&cfg.control, &model),
        model.oracle.optimal_cost,
    ) {
        verdicts.push(Verdict::at_most(
            "cost_oracle",
            (direct.j - target).abs(),
            oracle_threshold(&model, target, direct.stderr),
        ));
    }
    let report = Report {
        j: Some(direct.j),
        j_stderr: Some(direct.stderr),
        residual: None,
        verdicts,
    };
    out.json(
        "cost.json",
        &CostComparison {
            direct,
            augmented,
            difference,
            combined_stderr: se,
        },
    )?;
    Ok(report)
}
