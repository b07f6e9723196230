use bsmp_core::bsde::BsdeSolver;
use bsmp_core::registry::{self, RegisteredModel};
use bsmp_core::smp::{augmented_cost, evaluate_cost_direct, optimize};
use bsmp_core::stats::ROUNDOFF_FLOOR;
use serde_json::{Map, Value};

use super::{build_control, ensemble, oracle_threshold, trajectory_verdicts, y0_verdict, Report};
use crate::config::{ControlSpec, RunConfig};
use crate::error::CliError;
use crate::output::{Csv, Outputs, Verdict};

const OPTIMIZER_TOL: f64 = 0.02;

/// `(label, key, parameters)` of every problem with a closed-form solution.
fn cases() -> Vec<(&'static str, &'static str, Map<String, Value>)> {
    let terminal = |kind: &str| {
        let mut m = Map::new();
        m.insert("terminal".into(), Value::from(kind));
        m
    };
    vec![
        ("lq", "lq", Map::new()),
        ("zero_driver_constant", "zero_driver", terminal("constant")),
        ("zero_driver_brownian", "zero_driver", terminal("brownian")),
        ("zero_driver_square", "zero_driver", terminal("square")),
        ("heavy_tail", "heavy_tail", Map::new()),
        ("linear_driver", "linear_driver", Map::new()),
    ]
}

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Report, CliError> {
    let mut csv = Csv::new(&["case", "check", "value", "threshold", "pass"]);
    let mut verdicts = Vec::new();
    for (label, key, params) in cases() {
        let model = registry::build(key, &params, cfg.horizon)?;
        let case = run_case(cfg, &model)?;
        out.log(format!("benchmark case {label} done"));
        for v in case {
            csv.row(vec![
                label.into(),
                v.name.as_str().into(),
                v.value.into(),
                v.threshold.into(),
                v.pass.into(),
            ]);
            verdicts.push(Verdict {
                name: format!("{label}.{}", v.name),
                ..v
            });
        }
    }
    out.csv("benchmark.csv", &csv)?;
    Ok(Report {
        verdicts,
        ..Default::default()
    })
}

fn run_case(cfg: &RunConfig, model: &RegisteredModel) -> Result<Vec<Verdict>, CliError> {
    let spec = &model.spec;
    let ens = ensemble(cfg, model, cfg.paths, cfg.seed)?;
    let solver = BsdeSolver::new(spec, &ens, cfg.solver_options())?;
    let best = build_control(&ControlSpec::Oracle, model, &ens)?;
    let bundle = solver.solve(&best)?;
    let mut verdicts = Vec::new();
    verdicts.extend(y0_verdict(model, &ControlSpec::Oracle, &ens, &bundle)?);
    let direct = evaluate_cost_direct(spec, &ens, &bundle)?;
    if let Some(target) = model.oracle.optimal_cost {
        verdicts.push(Verdict::at_most(
            "cost_oracle",
            (direct.j - target).abs(),
            oracle_threshold(model, target, direct.stderr),
        ));
    }
    let augmented = augmented_cost(&solver, &bundle, 0.0)?;
    let se = direct.estimate().combined_stderr(&augmented.estimate());
    verdicts.push(Verdict::at_most(
        "cost_duality",
        (direct.j - augmented.j).abs(),
        5.0 * se + ROUNDOFF_FLOOR,
    ));
    if let Some(oracle) = &model.oracle.trajectory {
        verdicts.extend(trajectory_verdicts(oracle, &ens, &bundle));
    }
    if let (Some(target), false) = (model.oracle.optimal_cost, model.oracle.y0_control_free) {
        let u0 = build_control(
            &ControlSpec::Constant {
                value: spec.control_set.anchor(),
            },
            model,
            &ens,
        )?;
        let res = optimize(spec, &ens, &u0, &cfg.optimizer_options(), None)?;
        verdicts.push(Verdict::at_most(
            "optimizer_control_distance",
            res.control.l2_distance_sq(&best, ens.grid()).sqrt(),
            OPTIMIZER_TOL,
        ));
        verdicts.push(Verdict::at_most(
            "optimizer_cost",
            (res.cost.j - target).abs(),
            OPTIMIZER_TOL,
        ));
    }
    Ok(verdicts)
}
