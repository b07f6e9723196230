use bsmp_core::adjoint::{hamiltonian_grad_check, hv_field, solve_adjoint};
use bsmp_core::bsde::{BsdeSolver, ControlProcess};
use bsmp_core::diagnostics::{
    cost_expansion, duality_check, expansion_remainder_table, state_sensitivity_table,
    ConvergenceTable, DualityReport, ExpansionRemainder, StateSensitivity,
};
use bsmp_core::model::{
    grad_check_all, random_grad_points, validate_assumptions, AssumptionReport,
};
use bsmp_core::smp::{
    augmented_cost, check_stationarity, evaluate_cost_direct, projection_residual, CostBreakdown,
    StationarityReport,
};
use bsmp_core::stats::{Estimate, ROUNDOFF_FLOOR};
use serde::Serialize;

use super::{build_control, ensemble, norms_block, oracle_threshold, y0_verdict, Report};
use crate::config::{ControlSpec, RunConfig};
use crate::error::CliError;
use crate::output::{Cell, Csv, Outputs, Verdict};

const GRAD_CHECK_STEP: f64 = 1e-6;
const GRAD_CHECK_RADIUS: f64 = 2.0;
const GRAD_CHECK_TOL: f64 = 1e-4;
const HAMILTONIAN_TOL: f64 = 1e-6;
const SLOPE_MIN: f64 = 0.9;
/// Squared metrics at or below this are treated as exact zeros.
const SQUARED_ROUNDOFF: f64 = ROUNDOFF_FLOOR * ROUNDOFF_FLOOR;

#[derive(Serialize)]
struct OracleChecks {
    stationarity: StationarityReport,
    probes: Vec<Vec<f64>>,
    cost_expansion: Vec<Estimate>,
}

#[derive(Serialize)]
struct VerifyReport {
    assumptions: AssumptionReport,
    grad_check: f64,
    hamiltonian_check: f64,
    direct_cost: CostBreakdown,
    augmented_cost: CostBreakdown,
    projection_residual: Estimate,
    state_sensitivity: StateSensitivity,
    expansion_remainder: ExpansionRemainder,
    duality: DualityReport,
    oracle: Option<OracleChecks>,
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    let spec = &model.spec;
    let mut verdicts = Vec::new();

    let assumptions = validate_assumptions(spec, cfg.assumption_probes)?;
    let worst = assumptions
        .checks
        .iter()
        .map(|c| c.worst_ratio)
        .fold(0.0, f64::max);
    verdicts.push(Verdict::new("assumptions", worst, 1.0, assumptions.pass));
    let points = random_grad_points(spec, cfg.assumption_probes, GRAD_CHECK_RADIUS, cfg.seed);
    let grad_check = grad_check_all(spec, &points, GRAD_CHECK_STEP)?;
    verdicts.push(Verdict::at_most("grad_check", grad_check, GRAD_CHECK_TOL));
    let hamiltonian_check = hamiltonian_grad_check(spec, cfg.assumption_probes, cfg.seed)?;
    verdicts.push(Verdict::at_most(
        "hamiltonian_partials",
        hamiltonian_check,
        HAMILTONIAN_TOL,
    ));

    let ens = ensemble(cfg, &model, cfg.paths, cfg.seed)?;
    let solver = BsdeSolver::new(spec, &ens, cfg.solver_options())?;
    let u = build_control(&cfg.control, &model, &ens)?;
    let v = build_control(&cfg.probe_control, &model, &ens)?;
    let bundle = solver.solve(&u)?;
    let adjoint = solve_adjoint(spec, &ens, &bundle)?;
    let hv = hv_field(spec, &ens, &bundle, &adjoint)?;
    let residual = projection_residual(spec, &ens, &u, &hv);
    let direct = evaluate_cost_direct(spec, &ens, &bundle)?;
    let augmented = augmented_cost(&solver, &bundle, 0.0)?;
    let se = direct.estimate().combined_stderr(&augmented.estimate());
    verdicts.push(Verdict::at_most(
        "cost_duality",
        (direct.j - augmented.j).abs(),
        5.0 * se + ROUNDOFF_FLOOR,
    ));
    verdicts.extend(y0_verdict(&model, &cfg.control, &ens, &bundle)?);

    let sensitivity = state_sensitivity_table(&solver, &u, &v, &cfg.theta_grid)?;
    for table in [&sensitivity.sup_y, &sensitivity.int_z] {
        verdicts.push(rate_verdict(table));
    }
    out.csv(
        "state_sensitivity.csv",
        &tables_csv(&[&sensitivity.sup_y, &sensitivity.int_z]),
    )?;

    let remainder = expansion_remainder_table(&solver, &u, &v, &cfg.theta_grid)?;
    if model.affine {
        let worst = remainder
            .tables()
            .iter()
            .flat_map(|t| t.values.iter().map(|e| e.value))
            .fold(0.0, f64::max);
        verdicts.push(Verdict::at_most(
            "expansion_remainder_roundoff",
            worst,
            SQUARED_ROUNDOFF,
        ));
    } else {
        for table in remainder.tables() {
            verdicts.push(Verdict::new(
                format!("{}_nonincreasing", table.name),
                worst_increase(table),
                ROUNDOFF_FLOOR,
                table.monotone,
            ));
        }
    }
    out.csv("expansion_remainder.csv", &tables_csv(&remainder.tables()))?;

    let var = solver.solve_variational(&bundle, &v)?;
    let duality = duality_check(spec, &ens, &bundle, &adjoint, &var)?;
    verdicts.push(Verdict::new(
        "duality_martingale",
        duality.s_t.value.abs(),
        3.0 * duality.s_t.stderr + ROUNDOFF_FLOOR,
        duality.s_t_pass,
    ));
    verdicts.push(Verdict::new(
        "duality_gap",
        duality.gap.abs(),
        3.0 * duality.gap_stderr + duality.ito_residual.value.abs() + ROUNDOFF_FLOOR,
        duality.gap_pass,
    ));

    let oracle = match &model.oracle.optimal_control {
        Some(_) => Some(oracle_checks(cfg, &model, &solver, &mut verdicts)?),
        None => None,
    };

    let (norms, norm_verdicts) = norms_block(cfg, &model, &cfg.control, &ens, &bundle)?;
    verdicts.extend(norm_verdicts);
    out.json("norms.json", &norms)?;

    let report = Report {
        j: Some(direct.j),
        j_stderr: Some(direct.stderr),
        residual: Some(residual.value),
        verdicts,
    };
    out.json(
        "verify.json",
        &VerifyReport {
            assumptions,
            grad_check,
            hamiltonian_check,
            direct_cost: direct,
            augmented_cost: augmented,
            projection_residual: residual,
            state_sensitivity: sensitivity,
            expansion_remainder: remainder,
            duality,
            oracle,
        },
    )?;
    Ok(report)
}

/// Stationarity, variational inequality and cost expansion at the known optimum.
fn oracle_checks(
    cfg: &RunConfig,
    model: &bsmp_core::registry::RegisteredModel,
    solver: &BsdeSolver<'_>,
    verdicts: &mut Vec<Verdict>,
) -> Result<OracleChecks, CliError> {
    let spec = &model.spec;
    let ens = solver.ensemble();
    let best = build_control(&ControlSpec::Oracle, model, ens)?;
    let bundle = solver.solve(&best)?;
    let adjoint = solve_adjoint(spec, ens, &bundle)?;
    let probes = spec
        .control_set
        .random_points(cfg.probe_count, cfg.seed ^ 0x9E37_79B9);
    let controls = probes
        .iter()
        .map(|p| ControlProcess::constant(ens, p, &spec.control_set))
        .collect::<Result<Vec<_>, _>>()?;
    let stationarity = check_stationarity(
        spec,
        ens,
        &bundle,
        &adjoint,
        &controls,
        cfg.stationarity_tolerance,
    )?;
    verdicts.push(Verdict::at_most(
        "stationarity_residual",
        stationarity.residual.value,
        cfg.stationarity_tolerance,
    ));
    verdicts.push(Verdict::at_least(
        "variational_inequality",
        lowest_margin(&stationarity.vi_values),
        -ROUNDOFF_FLOOR,
    ));
    let expansions = controls
        .iter()
        .map(|c| {
            let var = solver.solve_variational(&bundle, c)?;
            cost_expansion(spec, ens, &bundle, &var)
        })
        .collect::<Result<Vec<_>, _>>()?;
    verdicts.push(Verdict::at_least(
        "cost_expansion_at_oracle",
        lowest_margin(&expansions),
        -ROUNDOFF_FLOOR,
    ));
    if let Some(target) = model.oracle.optimal_cost {
        let cost = evaluate_cost_direct(spec, ens, &bundle)?;
        verdicts.push(Verdict::at_most(
            "cost_oracle",
            (cost.j - target).abs(),
            oracle_threshold(model, target, cost.stderr),
        ));
    }
    Ok(OracleChecks {
        stationarity,
        probes,
        cost_expansion: expansions,
    })
}

/// `min_k (value_k + 3 SE_k)`: nonnegative when every estimate is
/// at least `-3 SE`.
fn lowest_margin(estimates: &[Estimate]) -> f64 {
    estimates
        .iter()
        .map(|e| e.value + 3.0 * e.stderr)
        .fold(f64::INFINITY, f64::min)
}

/// Log-log slope at least 0.9, or every value at roundoff level.
fn rate_verdict(table: &ConvergenceTable) -> Verdict {
    let largest = table.values.iter().map(|e| e.value).fold(0.0, f64::max);
    if largest <= SQUARED_ROUNDOFF {
        Verdict::at_most(
            format!("{}_negligible", table.name),
            largest,
            SQUARED_ROUNDOFF,
        )
    } else {
        Verdict::at_least(
            format!("{}_slope", table.name),
            table.slope.unwrap_or(f64::NAN),
            SLOPE_MIN,
        )
    }
}

/// Largest step-to-step increase beyond one standard error.
fn worst_increase(table: &ConvergenceTable) -> f64 {
    table
        .values
        .windows(2)
        .map(|w| w[1].value - w[0].value - w[0].stderr.max(w[1].stderr))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn tables_csv(tables: &[&ConvergenceTable]) -> Csv {
    let mut header = vec!["theta".to_string()];
    for t in tables {
        header.push(t.name.clone());
        header.push(format!("{}_stderr", t.name));
    }
    let mut csv = Csv::new(&header);
    for (i, theta) in tables[0].theta_grid.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*theta).into()];
        for t in tables {
            row.push(t.values[i].value.into());
            row.push(t.values[i].stderr.into());
        }
        csv.row(row);
    }
    csv
}
