//! Control problem definition.
//!
//! Shapes follow one convention everywhere:
//! - `y`, `p`: length `n`.
//! - `z`: `n x d`, row-major (`z[a * d + j]` is component `a`, Brownian column `j`).
//! - `v`: length `m`.
//! - `b_y`: `n x n` row-major, `b_y[a * n + c] = d b_a / d y_c`.
//! - `b_z`: `d` blocks of `n x n`, `b_z[j * n * n + a * n + c] = d b_a / d z_{c j}`.
//! - `b_v`: `n x m` row-major.

mod assumptions;
mod control_set;
mod gradcheck;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use assumptions::{validate_assumptions, AssumptionCheck, AssumptionReport, ProbePoint};
pub use control_set::ControlSet;
pub use gradcheck::{
    central_difference, grad_check, grad_check_all, random_grad_points, GradPoint,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// State dimension.
    pub n: usize,
    /// Brownian dimension.
    pub d: usize,
    /// Control dimension.
    pub m: usize,
}

impl Dimensions {
    pub fn new(n: usize, d: usize, m: usize) -> Result<Self> {
        if n == 0 || d == 0 || m == 0 {
            return Err(Error::InvalidInput(format!(
                "dimensions must be positive, got n={n} d={d} m={m}"
            )));
        }
        Ok(Self { n, d, m })
    }

    pub fn z_len(&self) -> usize {
        self.n * self.d
    }
}

/// Jacobians of the driver at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DriverGrad {
    pub by: Vec<f64>,
    pub bz: Vec<f64>,
    pub bv: Vec<f64>,
}

impl DriverGrad {
    pub fn zeros(dims: Dimensions) -> Self {
        Self {
            by: vec![0.0; dims.n * dims.n],
            bz: vec![0.0; dims.d * dims.n * dims.n],
            bv: vec![0.0; dims.n * dims.m],
        }
    }

    pub fn clear(&mut self) {
        self.by.fill(0.0);
        self.bz.fill(0.0);
        self.bv.fill(0.0);
    }
}

/// Gradients of the running cost at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct CostGrad {
    pub hy: Vec<f64>,
    pub hz: Vec<f64>,
    pub hv: Vec<f64>,
}

impl CostGrad {
    pub fn zeros(dims: Dimensions) -> Self {
        Self {
            hy: vec![0.0; dims.n],
            hz: vec![0.0; dims.z_len()],
            hv: vec![0.0; dims.m],
        }
    }

    pub fn clear(&mut self) {
        self.hy.fill(0.0);
        self.hz.fill(0.0);
        self.hv.fill(0.0);
    }
}

/// The functions `b`, `h`, `g`, `xi` with analytic first derivatives.
///
/// Gradient methods receive zeroed buffers and only need to write nonzero entries.
pub trait Model: Send + Sync + fmt::Debug {
    fn driver(&self, t: f64, y: &[f64], z: &[f64], v: &[f64], out: &mut [f64]);

    fn driver_grad(&self, t: f64, y: &[f64], z: &[f64], v: &[f64], grad: &mut DriverGrad);

    fn running_cost(&self, t: f64, y: &[f64], z: &[f64], v: &[f64]) -> f64;

    fn running_cost_grad(&self, t: f64, y: &[f64], z: &[f64], v: &[f64], grad: &mut CostGrad);

    fn initial_cost(&self, y: &[f64]) -> f64;

    fn initial_cost_grad(&self, y: &[f64], out: &mut [f64]);

    /// Terminal value as a function of `W_T`.
    fn terminal(&self, w_t: &[f64], out: &mut [f64]);

    /// Terminal value as a functional of the whole discrete path, `(N + 1) x d`
    /// values starting at `W_0 = 0`. Defaults to [`Model::terminal`] at the last node.
    fn terminal_path(&self, path: &[f64], d: usize, out: &mut [f64]) {
        self.terminal(&path[path.len() - d..], out)
    }
}

/// Declared constants used by the assumption probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionProfile {
    /// Bound `C` for derivatives, growth and z-Lipschitz constants.
    pub lipschitz_bound: f64,
    /// Exponent of the sublinear growth in `z`, in `(0, 1)`.
    pub growth_alpha: f64,
    /// Constant level for the nonnegative process `phi_t`, when one is declared.
    pub phi: Option<f64>,
    /// Stored for completeness; it does not enter any growth bound.
    pub psi: Option<f64>,
    /// `E|xi| < inf` but `E|xi|^2` may be infinite.
    pub terminal_in_l1_only: bool,
    /// Half-width of the `y`/`z` box sampled by the probes.
    pub probe_radius: f64,
}

impl Default for AssumptionProfile {
    fn default() -> Self {
        Self {
            lipschitz_bound: 1.0,
            growth_alpha: 0.5,
            phi: None,
            psi: None,
            terminal_in_l1_only: false,
            probe_radius: 10.0,
        }
    }
}

impl AssumptionProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.growth_alpha > 0.0 && self.growth_alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "growth_alpha must lie in (0,1), got {}",
                self.growth_alpha
            )));
        }
        if !(self.lipschitz_bound >= 0.0) {
            return Err(Error::InvalidInput("lipschitz_bound must be >= 0".into()));
        }
        if !(self.probe_radius > 0.0) {
            return Err(Error::InvalidInput("probe_radius must be > 0".into()));
        }
        if self.phi.is_some_and(|p| p < 0.0) || self.psi.is_some_and(|p| p < 0.0) {
            return Err(Error::InvalidInput(
                "phi and psi must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A fully specified control problem. Immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub dims: Dimensions,
    pub model: Arc<dyn Model>,
    pub control_set: ControlSet,
    pub horizon: f64,
    pub assumptions: AssumptionProfile,
}

impl ProblemSpec {
    pub fn new(
        dims: Dimensions,
        model: Arc<dyn Model>,
        control_set: ControlSet,
        horizon: f64,
        assumptions: AssumptionProfile,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        if control_set.dim() != dims.m {
            return Err(Error::Shape(format!(
                "control set has dimension {}, problem has m={}",
                control_set.dim(),
                dims.m
            )));
        }
        control_set.validate()?;
        assumptions.validate()?;
        Ok(Self {
            dims,
            model,
            control_set,
            horizon,
            assumptions,
        })
    }

    /// `b_z . Z` in the column-block convention: `sum_j B_j Z_{:, j}`.
    pub fn apply_bz(&self, bz: &[f64], zmat: &[f64], out: &mut [f64]) {
        let Dimensions { n, d, .. } = self.dims;
        for a in 0..n {
            let mut s = 0.0;
            for j in 0..d {
                let block = &bz[j * n * n + a * n..j * n * n + (a + 1) * n];
                for c in 0..n {
                    s += block[c] * zmat[c * d + j];
                }
            }
            out[a] = s;
        }
    }
}

/// Closure-backed model, convenient for one-off problems and tests.
pub struct FnModel {
    pub driver: Box<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>,
    pub driver_grad: Box<dyn Fn(f64, &[f64], &[f64], &[f64], &mut DriverGrad) + Send + Sync>,
    pub running_cost: Box<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>,
    pub running_cost_grad: Box<dyn Fn(f64, &[f64], &[f64], &[f64], &mut CostGrad) + Send + Sync>,
    pub initial_cost: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub initial_cost_grad: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    pub terminal: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl FnModel {
    /// Scalar (`n = d = m = 1`) model with `b = 0`, `h = 0`, `g(y) = y`, `xi = 0`.
    /// Fields are meant to be overwritten.
    pub fn scalar() -> Self {
        Self {
            driver: Box::new(|_, _, _, _, out| out[0] = 0.0),
            driver_grad: Box::new(|_, _, _, _, _| {}),
            running_cost: Box::new(|_, _, _, _| 0.0),
            running_cost_grad: Box::new(|_, _, _, _, _| {}),
            initial_cost: Box::new(|y| y[0]),
            initial_cost_grad: Box::new(|_, out| out[0] = 1.0),
            terminal: Box::new(|_, out| out[0] = 0.0),
        }
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnModel")
    }
}

impl Model for FnModel {
    fn driver(&self, t: f64, y: &[f64], z: &[f64], v: &[f64], out: &mut [f64]) {
        (self.driver)(t, y, z, v, out)
    }
    fn driver_grad(&self, t: f64, y: &[f64], z: &[f64], v: &[f64], grad: &mut DriverGrad) {
        (self.driver_grad)(t, y, z, v, grad)
    }
    fn running_cost(&self, t: f64, y: &[f64], z: &[f64], v: &[f64]) -> f64 {
        (self.running_cost)(t, y, z, v)
    }
    fn running_cost_grad(&self, t: f64, y: &[f64], z: &[f64], v: &[f64], grad: &mut CostGrad) {
        (self.running_cost_grad)(t, y, z, v, grad)
    }
    fn initial_cost(&self, y: &[f64]) -> f64 {
        (self.initial_cost)(y)
    }
    fn initial_cost_grad(&self, y: &[f64], out: &mut [f64]) {
        (self.initial_cost_grad)(y, out)
    }
    fn terminal(&self, w_t: &[f64], out: &mut [f64]) {
        (self.terminal)(w_t, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimensions() {
        assert!(Dimensions::new(0, 1, 1).is_err());
        assert!(Dimensions::new(1, 1, 1).is_ok());
    }

    #[test]
    fn profile_bounds() {
        let mut p = AssumptionProfile::default();
        assert!(p.validate().is_ok());
        p.growth_alpha = 1.0;
        assert!(p.validate().is_err());
        p.growth_alpha = 0.5;
        p.lipschitz_bound = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn bz_contraction_matches_column_convention() {
        let dims = Dimensions::new(2, 2, 1).unwrap();
        let spec = ProblemSpec::new(
            dims,
            Arc::new(FnModel::scalar()),
            ControlSet::interval(-1.0, 1.0),
            1.0,
            AssumptionProfile::default(),
        )
        .unwrap();
        // B_0 = [[1,2],[3,4]], B_1 = identity
        let bz = [1.0, 2.0, 3.0, 4.0, 1.0, 0.0, 0.0, 1.0];
        // Z = [[z00, z01],[z10, z11]]
        let z = [1.0, 10.0, 2.0, 20.0];
        let mut out = [0.0; 2];
        spec.apply_bz(&bz, &z, &mut out);
        // B_0 * (1,2) + I * (10,20)
        assert_eq!(out, [1.0 + 4.0 + 10.0, 3.0 + 8.0 + 20.0]);
    }

    #[test]
    fn horizon_and_control_dim_checked() {
        let dims = Dimensions::new(1, 1, 2).unwrap();
        let r = ProblemSpec::new(
            dims,
            Arc::new(FnModel::scalar()),
            ControlSet::interval(-1.0, 1.0),
            1.0,
            AssumptionProfile::default(),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
