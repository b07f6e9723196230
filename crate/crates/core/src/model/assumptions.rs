//! Randomized probing of the regularity assumptions with declared constants.
//!
//! Probes draw `t` uniformly on `[0, T]`, `y` and `z` uniformly in the box of
//! half-width `probe_radius`, and `v` in the control set's bounding box followed
//! by projection. A few structural probes (origin, box corners) are always
//! included. Findings are reported; nothing is enforced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CostGrad, DriverGrad, ProblemSpec};
use crate::{Error, Result};

const PROBE_SEED: u64 = 0x5eed_a55e_ab1e;
const FD_STEP: f64 = 1e-4;
const FD_REFINE: f64 = 10.0;
const FD_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub id: String,
    pub description: String,
    /// Largest observed `lhs / rhs` of the inequality; `<= 1` means satisfied.
    pub worst_ratio: f64,
    pub worst_probe: Option<ProbePoint>,
    pub hard_failure: Option<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub probes: usize,
    pub checks: Vec<AssumptionCheck>,
    pub pass: bool,
}

impl AssumptionReport {
    pub fn check(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

struct Tracker {
    id: &'static str,
    description: &'static str,
    worst: f64,
    probe: Option<ProbePoint>,
    hard: Option<String>,
}

impl Tracker {
    fn new(id: &'static str, description: &'static str) -> Self {
        Self {
            id,
            description,
            worst: 0.0,
            probe: None,
            hard: None,
        }
    }

    fn observe(&mut self, ratio: f64, p: &ProbePoint) {
        if self.worst.is_nan() {
            return;
        }
        if ratio.is_nan() || ratio > self.worst {
            self.worst = ratio;
            self.probe = Some(p.clone());
        }
    }

    fn fail_hard(&mut self, why: String, p: &ProbePoint) {
        if self.hard.is_none() {
            self.hard = Some(why);
            self.probe = Some(p.clone());
            self.worst = f64::INFINITY;
        }
    }

    fn finish(self) -> AssumptionCheck {
        let pass = self.hard.is_none() && self.worst <= 1.0;
        AssumptionCheck {
            id: self.id.into(),
            description: self.description.into(),
            worst_ratio: self.worst,
            worst_probe: self.probe,
            hard_failure: self.hard,
            pass,
        }
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

fn probe_points(spec: &ProblemSpec, budget: usize) -> Vec<ProbePoint> {
    let dims = spec.dims;
    let r = spec.assumptions.probe_radius;
    let (lo, hi) = spec.control_set.bounding_box(r);
    let anchor = spec.control_set.anchor();
    let mut pts = vec![
        ProbePoint {
            t: 0.0,
            y: vec![0.0; dims.n],
            z: vec![0.0; dims.z_len()],
            v: anchor.clone(),
        },
        ProbePoint {
            t: spec.horizon,
            y: vec![r; dims.n],
            z: vec![r; dims.z_len()],
            v: spec.control_set.project(&hi),
        },
        ProbePoint {
            t: 0.5 * spec.horizon,
            y: vec![-r; dims.n],
            z: vec![-r; dims.z_len()],
            v: spec.control_set.project(&lo),
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    for _ in 0..budget {
        let t = rng.random_range(0.0..=spec.horizon);
        let y = (0..dims.n).map(|_| rng.random_range(-r..=r)).collect();
        let z = (0..dims.z_len())
            .map(|_| rng.random_range(-r..=r))
            .collect();
        let raw: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if l < h { rng.random_range(*l..=*h) } else { *l })
            .collect();
        pts.push(ProbePoint {
            t,
            y,
            z,
            v: spec.control_set.project(&raw),
        });
    }
    pts
}

/// Probes the regularity, growth and z-Lipschitz assumptions.
pub fn validate_assumptions(spec: &ProblemSpec, probe_budget: usize) -> Result<AssumptionReport> {
    if probe_budget == 0 {
        return Err(Error::InvalidInput("probe_budget must be >= 1".into()));
    }
    let dims = spec.dims;
    let (n, d, m) = (dims.n, dims.d, dims.m);
    let model = spec.model.as_ref();
    let prof = &spec.assumptions;
    let c = prof.lipschitz_bound;
    let alpha = prof.growth_alpha;
    let phi = prof.phi.unwrap_or(0.0);

    let mut diff = Tracker::new(
        "smoothness",
        "b, h, g finite and continuously differentiable in (y, z, v)",
    );
    let mut bounded = Tracker::new("bounded_derivatives", "derivatives of b, h, g bounded by C");
    let mut g_growth = Tracker::new("initial_cost_growth", "|g(y)| <= C (1 + |y|)");
    let mut phi_r = Tracker::new(
        "phi_finite",
        "f(t, y, 0, v) - f(t, 0, 0, v) finite for f = b, h",
    );
    let mut z_growth = Tracker::new(
        "z_growth",
        "|f(t,y,z,v) - f(t,y,0,v)| <= C (phi + |y| + |z| + |v|)^alpha for f = b, h",
    );
    let mut z_lip = Tracker::new("z_lipschitz", "derivatives of b, h are C-Lipschitz in z");

    let points = probe_points(spec, probe_budget);
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED ^ 1);
    let r = prof.probe_radius;

    let mut b = vec![0.0; n];
    let mut b0 = vec![0.0; n];
    let mut dg = DriverGrad::zeros(dims);
    let mut dg2 = DriverGrad::zeros(dims);
    let mut cg = CostGrad::zeros(dims);
    let mut cg2 = CostGrad::zeros(dims);
    let mut gy = vec![0.0; n];
    let zero_z = vec![0.0; n * d];
    let zero_y = vec![0.0; n];

    for p in &points {
        let (t, y, z, v) = (p.t, &p.y[..], &p.z[..], &p.v[..]);

        // finiteness
        model.driver(t, y, z, v, &mut b);
        let h = model.running_cost(t, y, z, v);
        let g = model.initial_cost(y);
        if !(b.iter().all(|x| x.is_finite()) && h.is_finite() && g.is_finite()) {
            diff.fail_hard(format!("non-finite function value at t={t}"), p);
            continue;
        }

        // differentiability: central differences must settle under step refinement.
        let mut fd_ratio = 0.0f64;
        let mut fd_nonfinite = None;
        let mut fd_probe = |label: &'static str, f: &mut dyn FnMut(f64) -> f64| {
            let coarse = f(FD_STEP);
            let fine = f(FD_STEP / FD_REFINE);
            if !(coarse.is_finite() && fine.is_finite()) {
                fd_nonfinite.get_or_insert(label);
                return;
            }
            let denom = FD_TOL * (1.0 + coarse.abs().min(fine.abs()));
            fd_ratio = fd_ratio.max((coarse - fine).abs() / denom);
        };
        let mut out = vec![0.0; n];
        let mut xs: Vec<f64>;
        for a in 0..n {
            for i in 0..n {
                xs = y.to_vec();
                fd_probe("b_y", &mut |s| {
                    xs[i] = y[i] + s;
                    model.driver(t, &xs, z, v, &mut out);
                    let fp = out[a];
                    xs[i] = y[i] - s;
                    model.driver(t, &xs, z, v, &mut out);
                    (fp - out[a]) / (2.0 * s)
                });
            }
            for i in 0..n * d {
                xs = z.to_vec();
                fd_probe("b_z", &mut |s| {
                    xs[i] = z[i] + s;
                    model.driver(t, y, &xs, v, &mut out);
                    let fp = out[a];
                    xs[i] = z[i] - s;
                    model.driver(t, y, &xs, v, &mut out);
                    (fp - out[a]) / (2.0 * s)
                });
            }
            for i in 0..m {
                xs = v.to_vec();
                fd_probe("b_v", &mut |s| {
                    xs[i] = v[i] + s;
                    model.driver(t, y, z, &xs, &mut out);
                    let fp = out[a];
                    xs[i] = v[i] - s;
                    model.driver(t, y, z, &xs, &mut out);
                    (fp - out[a]) / (2.0 * s)
                });
            }
        }
        for i in 0..n {
            xs = y.to_vec();
            fd_probe("h_y", &mut |s| {
                xs[i] = y[i] + s;
                let fp = model.running_cost(t, &xs, z, v);
                xs[i] = y[i] - s;
                (fp - model.running_cost(t, &xs, z, v)) / (2.0 * s)
            });
            xs = y.to_vec();
            fd_probe("g_y", &mut |s| {
                xs[i] = y[i] + s;
                let fp = model.initial_cost(&xs);
                xs[i] = y[i] - s;
                (fp - model.initial_cost(&xs)) / (2.0 * s)
            });
        }
        for i in 0..n * d {
            xs = z.to_vec();
            fd_probe("h_z", &mut |s| {
                xs[i] = z[i] + s;
                let fp = model.running_cost(t, y, &xs, v);
                xs[i] = z[i] - s;
                (fp - model.running_cost(t, y, &xs, v)) / (2.0 * s)
            });
        }
        for i in 0..m {
            xs = v.to_vec();
            fd_probe("h_v", &mut |s| {
                xs[i] = v[i] + s;
                let fp = model.running_cost(t, y, z, &xs);
                xs[i] = v[i] - s;
                (fp - model.running_cost(t, y, z, &xs)) / (2.0 * s)
            });
        }
        if let Some(label) = fd_nonfinite {
            diff.fail_hard(format!("non-finite difference quotient for {label}"), p);
        } else {
            diff.observe(fd_ratio, p);
        }

        dg.clear();
        cg.clear();
        model.driver_grad(t, y, z, v, &mut dg);
        model.running_cost_grad(t, y, z, v, &mut cg);
        model.initial_cost_grad(y, &mut gy);
        let biggest = [
            max_abs(&dg.by),
            max_abs(&dg.bz),
            max_abs(&dg.bv),
            max_abs(&cg.hy),
            max_abs(&cg.hz),
            max_abs(&cg.hv),
            max_abs(&gy),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        bounded.observe(ratio(biggest, c), p);

        g_growth.observe(ratio(g.abs(), c * (1.0 + norm(y))), p);

        model.driver(t, y, &zero_z, v, &mut b);
        model.driver(t, &zero_y, &zero_z, v, &mut b0);
        let hy0 = model.running_cost(t, y, &zero_z, v);
        let h00 = model.running_cost(t, &zero_y, &zero_z, v);
        if b.iter().chain(&b0).all(|x| x.is_finite()) && hy0.is_finite() && h00.is_finite() {
            phi_r.observe(0.0, p);
        } else {
            phi_r.fail_hard("phi_r is not finite".into(), p);
        }

        let rhs = c * (phi + norm(y) + norm(z) + norm(v)).powf(alpha);
        let mut bz_full = vec![0.0; n];
        model.driver(t, y, z, v, &mut bz_full);
        let lhs_b = norm(
            &bz_full
                .iter()
                .zip(&b)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        z_growth.observe(ratio(lhs_b, rhs), p);
        z_growth.observe(ratio((h - hy0).abs(), rhs), p);

        // z-Lipschitz against a second random z
        let z2: Vec<f64> = (0..n * d).map(|_| rng.random_range(-r..=r)).collect();
        let dz = norm(&z.iter().zip(&z2).map(|(a, b)| a - b).collect::<Vec<_>>());
        dg2.clear();
        cg2.clear();
        model.driver_grad(t, y, &z2, v, &mut dg2);
        model.running_cost_grad(t, y, &z2, v, &mut cg2);
        let change = [
            max_abs_diff(&dg.by, &dg2.by),
            max_abs_diff(&dg.bz, &dg2.bz),
            max_abs_diff(&dg.bv, &dg2.bv),
            max_abs_diff(&cg.hy, &cg2.hy),
            max_abs_diff(&cg.hz, &cg2.hz),
            max_abs_diff(&cg.hv, &cg2.hv),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        z_lip.observe(ratio(change, c * dz), p);
    }

    let checks: Vec<AssumptionCheck> = [diff, bounded, g_growth, phi_r, z_growth, z_lip]
        .into_iter()
        .map(Tracker::finish)
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    Ok(AssumptionReport {
        probes: points.len(),
        checks,
        pass,
    })
}
