use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CostGrad, DriverGrad, ProblemSpec};
use crate::{Error, Result};

/// A point `(t, y, z, v)` at which derivatives are compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradPoint {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(x: &[f64], i: usize, step: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += step;
    let fp = f(&xp);
    xp[i] = x[i] - step;
    let fm = f(&xp);
    (fp - fm) / (2.0 * step)
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (1.0 + analytic.abs())
}

/// Largest `|analytic - fd| / (1 + |analytic|)` over every entry of
/// `b_y, b_z, b_v, h_y, h_z, h_v, g_y` at `point`.
pub fn grad_check(spec: &ProblemSpec, point: &GradPoint, step: f64) -> Result<f64> {
    let dims = spec.dims;
    let (n, d, m) = (dims.n, dims.d, dims.m);
    if !(step > 0.0) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    if point.y.len() != n || point.z.len() != n * d || point.v.len() != m {
        return Err(Error::Shape(
            "gradient check point does not match dimensions".into(),
        ));
    }
    let model = spec.model.as_ref();
    let t = point.t;
    let (y, z, v) = (&point.y[..], &point.z[..], &point.v[..]);

    let mut dg = DriverGrad::zeros(dims);
    model.driver_grad(t, y, z, v, &mut dg);
    let mut cg = CostGrad::zeros(dims);
    model.running_cost_grad(t, y, z, v, &mut cg);
    let mut gy = vec![0.0; n];
    model.initial_cost_grad(y, &mut gy);

    let mut worst = 0.0f64;
    let mut check = |analytic: f64, fd: f64, name: &'static str| -> Result<()> {
        if !fd.is_finite() {
            return Err(Error::GradCheck { function: name });
        }
        worst = worst.max(rel_err(analytic, fd));
        Ok(())
    };

    let mut out = vec![0.0; n];
    for a in 0..n {
        for c in 0..n {
            let fd = central_difference(y, c, step, |yy| {
                model.driver(t, yy, z, v, &mut out);
                out[a]
            });
            check(dg.by[a * n + c], fd, "b_y")?;
        }
        for c in 0..n {
            for j in 0..d {
                let fd = central_difference(z, c * d + j, step, |zz| {
                    model.driver(t, y, zz, v, &mut out);
                    out[a]
                });
                check(dg.bz[j * n * n + a * n + c], fd, "b_z")?;
            }
        }
        for k in 0..m {
            let fd = central_difference(v, k, step, |vv| {
                model.driver(t, y, z, vv, &mut out);
                out[a]
            });
            check(dg.bv[a * m + k], fd, "b_v")?;
        }
    }
    for c in 0..n {
        let fd = central_difference(y, c, step, |yy| model.running_cost(t, yy, z, v));
        check(cg.hy[c], fd, "h_y")?;
        let fd = central_difference(y, c, step, |yy| model.initial_cost(yy));
        check(gy[c], fd, "g_y")?;
    }
    for e in 0..n * d {
        let fd = central_difference(z, e, step, |zz| model.running_cost(t, y, zz, v));
        check(cg.hz[e], fd, "h_z")?;
    }
    for k in 0..m {
        let fd = central_difference(v, k, step, |vv| model.running_cost(t, y, z, vv));
        check(cg.hv[k], fd, "h_v")?;
    }
    Ok(worst)
}

/// `count` points with `t` uniform on `[0, T]`, `y` and `z` uniform in
/// `[-radius, radius]` and `v` drawn from the control set. Deterministic in `seed`.
pub fn random_grad_points(
    spec: &ProblemSpec,
    count: usize,
    radius: f64,
    seed: u64,
) -> Vec<GradPoint> {
    let dims = spec.dims;
    let controls = spec.control_set.random_points(count, seed ^ 0x5EED);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    controls
        .into_iter()
        .map(|v| GradPoint {
            t: rng.random_range(0.0..=spec.horizon),
            y: (0..dims.n)
                .map(|_| rng.random_range(-radius..=radius))
                .collect(),
            z: (0..dims.z_len())
                .map(|_| rng.random_range(-radius..=radius))
                .collect(),
            v,
        })
        .collect()
}

/// Worst [`grad_check`] value over `points`.
pub fn grad_check_all(spec: &ProblemSpec, points: &[GradPoint], step: f64) -> Result<f64> {
    points
        .iter()
        .try_fold(0.0f64, |acc, pt| Ok(acc.max(grad_check(spec, pt, step)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssumptionProfile, ControlSet, Dimensions, FnModel};
    use std::sync::Arc;

    fn scalar_spec(model: FnModel) -> ProblemSpec {
        ProblemSpec::new(
            Dimensions::new(1, 1, 1).unwrap(),
            Arc::new(model),
            ControlSet::interval(-2.0, 2.0),
            1.0,
            AssumptionProfile::default(),
        )
        .unwrap()
    }

    fn lq_model() -> FnModel {
        let mut m = FnModel::scalar();
        m.driver = Box::new(|_, _, _, v, out| out[0] = v[0]);
        m.driver_grad = Box::new(|_, _, _, _, g| g.bv[0] = 1.0);
        m.running_cost = Box::new(|_, _, _, v| 0.5 * v[0] * v[0]);
        m.running_cost_grad = Box::new(|_, _, _, v, g| g.hv[0] = v[0]);
        m
    }

    fn pt(y: f64, z: f64, v: f64) -> GradPoint {
        GradPoint {
            t: 0.3,
            y: vec![y],
            z: vec![z],
            v: vec![v],
        }
    }

    #[test]
    fn polynomial_model_is_exact() {
        let spec = scalar_spec(lq_model());
        let e = grad_check(&spec, &pt(0.7, -0.2, 0.4), 1e-5).unwrap();
        assert!(e <= 1e-8, "{e}");
    }

    #[test]
    fn smooth_model_central_difference_accuracy() {
        let mut m = FnModel::scalar();
        m.driver = Box::new(|_, y, _, v, out| out[0] = y[0].sin() * v[0]);
        m.driver_grad = Box::new(|_, y, _, v, g| {
            g.by[0] = y[0].cos() * v[0];
            g.bv[0] = y[0].sin();
        });
        let spec = scalar_spec(m);
        for (y, v) in [(0.3, 0.5), (-1.2, 1.7), (2.5, -0.9)] {
            let e = grad_check(&spec, &pt(y, 0.1, v), 1e-5).unwrap();
            assert!(e <= 1e-9, "{e}");
        }
    }

    #[test]
    fn random_points_are_seeded_and_admissible() {
        let spec = scalar_spec(lq_model());
        let pts = random_grad_points(&spec, 30, 2.0, 4);
        assert_eq!(pts, random_grad_points(&spec, 30, 2.0, 4));
        assert!(pts
            .iter()
            .all(|p| p.y[0].abs() <= 2.0 && spec.control_set.contains(&p.v, 0.0)));
        assert!(grad_check_all(&spec, &pts, 1e-5).unwrap() <= 1e-8);
    }

    #[test]
    fn injected_factor_two_fault_is_detected() {
        let mut m = FnModel::scalar();
        m.driver = Box::new(|_, y, _, _, out| out[0] = 1000.0 * y[0]);
        m.driver_grad = Box::new(|_, _, _, _, g| g.by[0] = 2000.0);
        let spec = scalar_spec(m);
        let e = grad_check(&spec, &pt(0.5, 0.0, 0.0), 1e-5).unwrap();
        assert!((e - 0.5).abs() < 1e-3, "{e}");
    }

    #[test]
    fn non_finite_quotient_names_function() {
        let mut m = FnModel::scalar();
        m.running_cost = Box::new(|_, y, _, _| if y[0] > 0.5 { f64::INFINITY } else { 0.0 });
        let spec = scalar_spec(m);
        let err = grad_check(&spec, &pt(0.5, 0.0, 0.0), 1e-3).unwrap_err();
        assert!(matches!(err, Error::GradCheck { function: "h_y" }));
    }
}
