//! Named benchmark problems (all with `n = d = m = 1`) and their closed-form
//! reference values.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::model::{
    AssumptionProfile, ControlSet, CostGrad, Dimensions, DriverGrad, Model, ProblemSpec,
};
use crate::{Error, Result};

/// Registered keys with a one-line description.
pub const ENTRIES: [(&str, &str); 5] = [
    ("lq", "b = v, h = v^2/2, g = kappa y, xi = W_T"),
    (
        "zero_driver",
        "b = 0, h = r v^2, g = y, xi constant, W_T or W_T^2",
    ),
    (
        "heavy_tail",
        "b = 0, h = v^2/2, g = y, xi = |W_T|^(-1/2) (integrable, not square integrable)",
    ),
    ("linear_driver", "b = beta y, h = v^2/2, g = y, xi = c"),
    (
        "nonlinear",
        "b = sin v + a tanh y + s z, h = v^2/2 + c y^2, g = tanh y, xi = W_T",
    ),
];

pub fn keys() -> impl Iterator<Item = &'static str> {
    ENTRIES.iter().map(|(k, _)| *k)
}

/// Known reference values; `None` where no closed form is available.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Oracle {
    /// Optimal control, constant in time and across paths.
    pub optimal_control: Option<Vec<f64>>,
    pub optimal_cost: Option<f64>,
    /// `y_0` under the optimal control.
    pub optimal_y0: Option<f64>,
    /// The driver ignores the control, so `optimal_y0` holds for every control.
    pub y0_control_free: bool,
    /// Closed-form `(y, z)` along the paths when the driver ignores the control.
    pub trajectory: Option<TrajectoryOracle>,
    /// Relative bias of the time discretization in `y_0` and the cost; zero
    /// when the Euler scheme is exact in time.
    pub time_step_rtol: f64,
}

/// Closed-form solution `(y_t, z_t)` as a function of `(t, W_t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryOracle {
    /// `y = c`, `z = 0`.
    Constant { c: f64 },
    /// `y = W_t`, `z = 1`.
    Brownian,
    /// `y = W_t^2 + T - t`, `z = 2 W_t`.
    Square,
    /// `y = c exp(-beta (T - t))`, `z = 0`.
    Exponential { c: f64, beta: f64 },
}

impl TrajectoryOracle {
    pub fn eval(&self, t: f64, horizon: f64, w: f64) -> (f64, f64) {
        match *self {
            TrajectoryOracle::Constant { c } => (c, 0.0),
            TrajectoryOracle::Brownian => (w, 1.0),
            TrajectoryOracle::Square => (w * w + horizon - t, 2.0 * w),
            TrajectoryOracle::Exponential { c, beta } => (c * (-beta * (horizon - t)).exp(), 0.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegisteredModel {
    pub key: &'static str,
    pub spec: ProblemSpec,
    pub oracle: Oracle,
    /// Parameters with defaults filled in.
    pub params: Map<String, Value>,
    /// Driver affine in `(y, z, v)`: the first-order state expansion in the
    /// control is exact up to roundoff.
    pub affine: bool,
}

struct Params<'a> {
    given: &'a Map<String, Value>,
    resolved: Map<String, Value>,
}

impl<'a> Params<'a> {
    fn new(key: &str, given: &'a Map<String, Value>, allowed: &[&str]) -> Result<Self> {
        if let Some(bad) = given.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidInput(format!(
                "model {key:?} has no parameter {bad:?}"
            )));
        }
        Ok(Self {
            given,
            resolved: Map::new(),
        })
    }

    fn f64(&mut self, name: &str, default: f64) -> Result<f64> {
        let v = match self.given.get(name) {
            None => default,
            Some(v) => v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
                Error::InvalidInput(format!("parameter {name:?} must be a finite number"))
            })?,
        };
        self.resolved.insert(name.into(), Value::from(v));
        Ok(v)
    }

    fn str(&mut self, name: &str, default: &str) -> Result<String> {
        let v = match self.given.get(name) {
            None => default.to_string(),
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::InvalidInput(format!("parameter {name:?} must be a string")))?
                .to_string(),
        };
        self.resolved.insert(name.into(), Value::from(v.clone()));
        Ok(v)
    }
}

fn scalar_dims() -> Dimensions {
    Dimensions { n: 1, d: 1, m: 1 }
}

/// Builds a registered problem on horizon `horizon`.
pub fn build(key: &str, params: &Map<String, Value>, horizon: f64) -> Result<RegisteredModel> {
    match key {
        "lq" => {
            let mut p = Params::new(key, params, &["kappa", "lo", "hi"])?;
            let kappa = p.f64("kappa", 0.5)?;
            let set = ControlSet::interval(p.f64("lo", -2.0)?, p.f64("hi", 2.0)?);
            let inside = set.contains(&[kappa], 0.0);
            let profile = AssumptionProfile {
                lipschitz_bound: 2.0,
                ..Default::default()
            };
            let spec =
                ProblemSpec::new(scalar_dims(), Arc::new(Lq { kappa }), set, horizon, profile)?;
            let oracle = if inside {
                Oracle {
                    optimal_control: Some(vec![kappa]),
                    optimal_cost: Some(-0.5 * kappa * kappa * horizon),
                    optimal_y0: Some(-kappa * horizon),
                    ..Default::default()
                }
            } else {
                Oracle::default()
            };
            Ok(RegisteredModel {
                key: "lq",
                spec,
                oracle,
                params: p.resolved,
                affine: true,
            })
        }
        "zero_driver" => {
            let mut p = Params::new(key, params, &["terminal", "c", "r"])?;
            let kind = p.str("terminal", "square")?;
            let c = p.f64("c", 3.0)?;
            let r = p.f64("r", 1.0)?;
            if r < 0.0 {
                return Err(Error::InvalidInput("parameter \"r\" must be >= 0".into()));
            }
            let (terminal, y0, path) = match kind.as_str() {
                "constant" => (
                    ZeroTerminal::Constant(c),
                    c,
                    TrajectoryOracle::Constant { c },
                ),
                "brownian" => (ZeroTerminal::Brownian, 0.0, TrajectoryOracle::Brownian),
                "square" => (ZeroTerminal::Square, horizon, TrajectoryOracle::Square),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "terminal must be constant, brownian or square, got {other:?}"
                    )))
                }
            };
            let profile = AssumptionProfile {
                lipschitz_bound: 2.0 * r.max(0.5),
                ..Default::default()
            };
            let spec = ProblemSpec::new(
                scalar_dims(),
                Arc::new(ZeroDriver { terminal, r }),
                ControlSet::interval(-1.0, 1.0),
                horizon,
                profile,
            )?;
            let oracle = Oracle {
                optimal_control: Some(vec![0.0]),
                optimal_cost: Some(y0),
                optimal_y0: Some(y0),
                y0_control_free: true,
                trajectory: Some(path),
                time_step_rtol: 0.0,
            };
            Ok(RegisteredModel {
                key: "zero_driver",
                spec,
                oracle,
                params: p.resolved,
                affine: true,
            })
        }
        "heavy_tail" => {
            Params::new(key, params, &[])?;
            let profile = AssumptionProfile {
                terminal_in_l1_only: true,
                ..Default::default()
            };
            let spec = ProblemSpec::new(
                scalar_dims(),
                Arc::new(HeavyTail),
                ControlSet::interval(-1.0, 1.0),
                horizon,
                profile,
            )?;
            let y0 = inverse_sqrt_abs_moment(horizon);
            let oracle = Oracle {
                optimal_control: Some(vec![0.0]),
                optimal_cost: Some(y0),
                optimal_y0: Some(y0),
                y0_control_free: true,
                trajectory: None,
                time_step_rtol: 0.0,
            };
            Ok(RegisteredModel {
                key: "heavy_tail",
                spec,
                oracle,
                params: Map::new(),
                affine: true,
            })
        }
        "linear_driver" => {
            let mut p = Params::new(key, params, &["beta", "c"])?;
            let beta = p.f64("beta", 0.5)?;
            let c = p.f64("c", 2.0)?;
            let profile = AssumptionProfile {
                lipschitz_bound: beta.abs().max(1.0),
                ..Default::default()
            };
            let spec = ProblemSpec::new(
                scalar_dims(),
                Arc::new(LinearDriver { beta, c }),
                ControlSet::interval(-1.0, 1.0),
                horizon,
                profile,
            )?;
            let y0 = c * (-beta * horizon).exp();
            let oracle = Oracle {
                optimal_control: Some(vec![0.0]),
                optimal_cost: Some(y0),
                optimal_y0: Some(y0),
                y0_control_free: true,
                trajectory: Some(TrajectoryOracle::Exponential { c, beta }),
                time_step_rtol: 0.02,
            };
            Ok(RegisteredModel {
                key: "linear_driver",
                spec,
                oracle,
                params: p.resolved,
                affine: true,
            })
        }
        "nonlinear" => {
            let mut p = Params::new(key, params, &["a", "s", "c"])?;
            let model = Nonlinear {
                a: p.f64("a", 0.1)?,
                s: p.f64("s", 0.1)?,
                c: p.f64("c", 0.1)?,
            };
            let profile = AssumptionProfile {
                lipschitz_bound: 2.5,
                growth_alpha: 0.5,
                ..Default::default()
            };
            let spec = ProblemSpec::new(
                scalar_dims(),
                Arc::new(model),
                ControlSet::interval(-1.0, 1.0),
                horizon,
                profile,
            )?;
            Ok(RegisteredModel {
                key: "nonlinear",
                spec,
                oracle: Oracle::default(),
                params: p.resolved,
                affine: false,
            })
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// `E|W_T|^{-1/2}` by Simpson quadrature of `4 / sqrt(2 pi) int_0^inf exp(-s^4 / 2) ds`
/// (substitution `|x| = s^2` removes the singularity), scaled by `T^{-1/4}`.
pub fn inverse_sqrt_abs_moment(horizon: f64) -> f64 {
    const UPPER: f64 = 5.0;
    const INTERVALS: usize = 4000;
    let h = UPPER / INTERVALS as f64;
    let f = |s: f64| (-0.5 * s.powi(4)).exp();
    let mut acc = f(0.0) + f(UPPER);
    for i in 1..INTERVALS {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = acc * h / 3.0;
    4.0 / (2.0 * PI).sqrt() * integral * horizon.powf(-0.25)
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

#[derive(Debug)]
struct Lq {
    kappa: f64,
}

impl Model for Lq {
    fn driver(&self, _: f64, _: &[f64], _: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = v[0];
    }
    fn driver_grad(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], g: &mut DriverGrad) {
        g.bv[0] = 1.0;
    }
    fn running_cost(&self, _: f64, _: &[f64], _: &[f64], v: &[f64]) -> f64 {
        0.5 * v[0] * v[0]
    }
    fn running_cost_grad(&self, _: f64, _: &[f64], _: &[f64], v: &[f64], g: &mut CostGrad) {
        g.hv[0] = v[0];
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        self.kappa * y[0]
    }
    fn initial_cost_grad(&self, _: &[f64], out: &mut [f64]) {
        out[0] = self.kappa;
    }
    fn terminal(&self, w: &[f64], out: &mut [f64]) {
        out[0] = w[0];
    }
}

#[derive(Debug, Clone, Copy)]
enum ZeroTerminal {
    Constant(f64),
    Brownian,
    Square,
}

#[derive(Debug)]
struct ZeroDriver {
    terminal: ZeroTerminal,
    r: f64,
}

impl Model for ZeroDriver {
    fn driver(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn driver_grad(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], _: &mut DriverGrad) {}
    fn running_cost(&self, _: f64, _: &[f64], _: &[f64], v: &[f64]) -> f64 {
        self.r * v[0] * v[0]
    }
    fn running_cost_grad(&self, _: f64, _: &[f64], _: &[f64], v: &[f64], g: &mut CostGrad) {
        g.hv[0] = 2.0 * self.r * v[0];
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        y[0]
    }
    fn initial_cost_grad(&self, _: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn terminal(&self, w: &[f64], out: &mut [f64]) {
        out[0] = match self.terminal {
            ZeroTerminal::Constant(c) => c,
            ZeroTerminal::Brownian => w[0],
            ZeroTerminal::Square => w[0] * w[0],
        };
    }
}

#[derive(Debug)]
struct HeavyTail;

impl Model for HeavyTail {
    fn driver(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn driver_grad(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], _: &mut DriverGrad) {}
    fn running_cost(&self, _: f64, _: &[f64], _: &[f64], v: &[f64]) -> f64 {
        0.5 * v[0] * v[0]
    }
    fn running_cost_grad(&self, _: f64, _: &[f64], _: &[f64], v: &[f64], g: &mut CostGrad) {
        g.hv[0] = v[0];
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        y[0]
    }
    fn initial_cost_grad(&self, _: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn terminal(&self, w: &[f64], out: &mut [f64]) {
        out[0] = w[0].abs().powf(-0.5);
    }
}

#[derive(Debug)]
struct LinearDriver {
    beta: f64,
    c: f64,
}

impl Model for LinearDriver {
    fn driver(&self, _: f64, y: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = self.beta * y[0];
    }
    fn driver_grad(&self, _: f64, _: &[f64], _: &[f64], _: &[f64], g: &mut DriverGrad) {
        g.by[0] = self.beta;
    }
    fn running_cost(&self, _: f64, _: &[f64], _: &[f64], v: &[f64]) -> f64 {
        0.5 * v[0] * v[0]
    }
    fn running_cost_grad(&self, _: f64, _: &[f64], _: &[f64], v: &[f64], g: &mut CostGrad) {
        g.hv[0] = v[0];
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        y[0]
    }
    fn initial_cost_grad(&self, _: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn terminal(&self, _: &[f64], out: &mut [f64]) {
        out[0] = self.c;
    }
}

#[derive(Debug)]
struct Nonlinear {
    a: f64,
    s: f64,
    c: f64,
}

impl Model for Nonlinear {
    fn driver(&self, _: f64, y: &[f64], z: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = v[0].sin() + self.a * y[0].tanh() + self.s * z[0];
    }
    fn driver_grad(&self, _: f64, y: &[f64], _: &[f64], v: &[f64], g: &mut DriverGrad) {
        g.by[0] = self.a * sech2(y[0]);
        g.bz[0] = self.s;
        g.bv[0] = v[0].cos();
    }
    fn running_cost(&self, _: f64, y: &[f64], _: &[f64], v: &[f64]) -> f64 {
        0.5 * v[0] * v[0] + self.c * y[0] * y[0]
    }
    fn running_cost_grad(&self, _: f64, y: &[f64], _: &[f64], v: &[f64], g: &mut CostGrad) {
        g.hy[0] = 2.0 * self.c * y[0];
        g.hv[0] = v[0];
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        y[0].tanh()
    }
    fn initial_cost_grad(&self, y: &[f64], out: &mut [f64]) {
        out[0] = sech2(y[0]);
    }
    fn terminal(&self, w: &[f64], out: &mut [f64]) {
        out[0] = w[0];
    }
}
