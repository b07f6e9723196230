use bsmp_core::adjoint::{solve_adjoint, AdjointPath};
use bsmp_core::bsde::{BsdeSolver, TrajectoryBundle};
use bsmp_core::sampling::PathEnsemble;
use bsmp_core::smp::evaluate_cost_direct;

use super::{
    build_control, ensemble, moments_csv, norms_block, trajectory_verdicts, y0_verdict, Report,
};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Cell, Csv, Outputs, Verdict};

pub fn run(cfg: &RunConfig, out: &mut Outputs) -> Result<Report, CliError> {
    let model = cfg.build_model()?;
    let spec = &model.spec;
    let ens = ensemble(cfg, &model, cfg.paths, cfg.seed)?;
    let solver = BsdeSolver::new(spec, &ens, cfg.solver_options())?;
    let control = build_control(&cfg.control, &model, &ens)?;
    let bundle = solver.solve(&control)?;
    let adjoint = solve_adjoint(spec, &ens, &bundle)?;
    let cost = evaluate_cost_direct(spec, &ens, &bundle)?;
    out.log(format!("winsorized_paths {}", solver.winsorized_paths()));

    out.csv(
        "trajectories.csv",
        &trajectory_csv(&ens, &bundle, cfg.dump_paths),
    )?;
    out.csv("moments.csv", &moments_csv(&ens, &bundle))?;
    out.csv("adjoint.csv", &adjoint_csv(&ens, &adjoint, cfg.dump_paths))?;

    let non_finite = [&bundle.y, &bundle.z, &adjoint.p]
        .iter()
        .map(|a| a.as_slice().iter().filter(|x| !x.is_finite()).count())
        .sum::<usize>();
    let mut verdicts = vec![Verdict::at_most(
        "non_finite_values",
        non_finite as f64,
        0.0,
    )];
    verdicts.extend(y0_verdict(&model, &cfg.control, &ens, &bundle)?);
    if let Some(oracle) = &model.oracle.trajectory {
        verdicts.extend(trajectory_verdicts(oracle, &ens, &bundle));
    }
    let (norms, norm_verdicts) = norms_block(cfg, &model, &cfg.control, &ens, &bundle)?;
    out.json("norms.json", &norms)?;
    verdicts.extend(norm_verdicts);

    Ok(Report {
        j: Some(cost.j),
        j_stderr: Some(cost.stderr),
        residual: None,
        verdicts,
    })
}

/// `path, step, t, w*, y*, z*, u*` for the first `limit` paths; `z` and `u`
/// are empty at the terminal node.
pub(crate) fn trajectory_csv(ens: &PathEnsemble, bundle: &TrajectoryBundle, limit: usize) -> Csv {
    let (n, d, m) = (bundle.y.width(), ens.dim(), bundle.control.dim());
    let mut header = vec!["path".to_string(), "step".to_string(), "t".to_string()];
    header.extend((1..=d).map(|j| format!("w{j}")));
    header.extend((1..=n).map(|a| format!("y{a}")));
    header.extend((1..=n).flat_map(|a| (1..=d).map(move |j| format!("z{a}_{j}"))));
    header.extend((1..=m).map(|c| format!("u{c}")));
    let mut csv = Csv::new(&header);
    let steps = ens.steps();
    for k in 0..limit.min(ens.path_count()) {
        for i in 0..=steps {
            let mut row: Vec<Cell> = vec![k.into(), i.into(), ens.grid().t(i).into()];
            row.extend(ens.w(k, i).iter().map(|x| Cell::from(*x)));
            row.extend(bundle.y.at(i, k).iter().map(|x| Cell::from(*x)));
            if i < steps {
                row.extend(bundle.z.at(i, k).iter().map(|x| Cell::from(*x)));
                row.extend(bundle.control.at(i, k).iter().map(|x| Cell::from(*x)));
            } else {
                row.extend(std::iter::repeat_n(Cell::Empty, n * d + m));
            }
            csv.row(row);
        }
    }
    csv
}

pub(crate) fn adjoint_csv(ens: &PathEnsemble, adjoint: &AdjointPath, limit: usize) -> Csv {
    let n = adjoint.p.width();
    let mut header = vec!["path".to_string(), "step".to_string(), "t".to_string()];
    header.extend((1..=n).map(|a| format!("p{a}")));
    let mut csv = Csv::new(&header);
    for k in 0..limit.min(ens.path_count()) {
        for i in 0..=ens.steps() {
            let mut row: Vec<Cell> = vec![k.into(), i.into(), ens.grid().t(i).into()];
            row.extend(adjoint.p.at(i, k).iter().map(|x| Cell::from(*x)));
            csv.row(row);
        }
    }
    csv
}
