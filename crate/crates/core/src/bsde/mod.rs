//! Backward solvers: the controlled state equation, its linearization in the
//! control, the cost-augmented system and the difference of two solutions.

mod regression;
mod solver;

use serde::{Deserialize, Serialize};

use crate::array::StepArray;
use crate::model::ControlSet;
use crate::sampling::{EnsembleId, PathEnsemble, TimeGrid};
use crate::{par, Error, Result};

pub use regression::{
    regress, BasisKind, RegressionBasis, Regressors, StepFit, StepRegression, MAX_CONDITION,
};
pub use solver::{
    solve_bsde, solve_difference, solve_variational, AugmentedSolution, BsdeSolver,
    DifferenceSolution, SolverOptions,
};

/// Membership tolerance used when flagging controls as admissible.
pub const ADMISSIBLE_TOL: f64 = 1e-12;

/// A control sampled on the grid, one value per path and step, held constant on
/// `[t_i, t_{i+1})`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlProcess {
    values: StepArray,
    admissible: bool,
}

impl ControlProcess {
    /// Wraps `values` (`N x P x m`) and records whether every value lies in `set`.
    pub fn new(values: StepArray, set: &ControlSet) -> Result<Self> {
        if values.width() != set.dim() {
            return Err(Error::Shape(format!(
                "control width {} does not match control set dimension {}",
                values.width(),
                set.dim()
            )));
        }
        let admissible = values
            .as_slice()
            .chunks(values.width())
            .all(|v| set.contains(v, ADMISSIBLE_TOL));
        Ok(Self { values, admissible })
    }

    pub fn constant(ensemble: &PathEnsemble, value: &[f64], set: &ControlSet) -> Result<Self> {
        let m = value.len();
        let mut values = StepArray::zeros(ensemble.steps(), ensemble.path_count(), m);
        for chunk in values.as_mut_slice().chunks_mut(m) {
            chunk.copy_from_slice(value);
        }
        Self::new(values, set)
    }

    /// Markov control `v_i = f(t_i, W_{t_i})`, adapted by construction.
    pub fn markov<F>(ensemble: &PathEnsemble, m: usize, set: &ControlSet, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Sync + Send,
    {
        let grid = ensemble.grid();
        let mut values = StepArray::zeros(ensemble.steps(), ensemble.path_count(), m);
        for i in 0..ensemble.steps() {
            let t = grid.t(i);
            par::for_each_path(values.step_mut(i), m, |k, out| f(t, ensemble.w(k, i), out));
        }
        Self::new(values, set)
    }

    /// Projects every value onto `set`.
    pub fn projected(mut values: StepArray, set: &ControlSet) -> Result<Self> {
        let m = values.width();
        if m != set.dim() {
            return Err(Error::Shape(
                "control width does not match control set".into(),
            ));
        }
        par::for_each_path(values.as_mut_slice(), m, |_, v| {
            let x = v.to_vec();
            set.project_into(&x, v);
        });
        Self::new(values, set)
    }

    pub fn values(&self) -> &StepArray {
        &self.values
    }

    pub fn into_values(self) -> StepArray {
        self.values
    }

    pub fn admissible(&self) -> bool {
        self.admissible
    }

    pub fn require_admissible(&self) -> Result<()> {
        if self.admissible {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "control takes values outside the control set".into(),
            ))
        }
    }

    #[inline]
    pub fn at(&self, step: usize, path: usize) -> &[f64] {
        self.values.at(step, path)
    }

    pub fn dim(&self) -> usize {
        self.values.width()
    }

    pub fn steps(&self) -> usize {
        self.values.steps()
    }

    pub fn paths(&self) -> usize {
        self.values.paths()
    }

    /// Per-step mean and sample variance of each component.
    pub fn step_moments(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        moments(&self.values)
    }

    /// `E int |self - other|^2 dt` over the paths (left-point in time).
    pub fn l2_distance_sq(&self, other: &ControlProcess, grid: &TimeGrid) -> f64 {
        let p = self.paths();
        let m = self.dim();
        let mut total = 0.0;
        for i in 0..self.steps() {
            let a = self.values.step(i);
            let b = other.values.step(i);
            let s = par::sum_paths(p, |k| {
                (0..m)
                    .map(|c| (a[k * m + c] - b[k * m + c]).powi(2))
                    .sum::<f64>()
            });
            total += s / p as f64 * grid.step_len(i);
        }
        total
    }

    pub(crate) fn check_shape(&self, ensemble: &PathEnsemble, m: usize) -> Result<()> {
        if self.steps() != ensemble.steps()
            || self.paths() != ensemble.path_count()
            || self.dim() != m
        {
            return Err(Error::Shape(format!(
                "control is {} x {} x {}, expected {} x {} x {}",
                self.steps(),
                self.paths(),
                self.dim(),
                ensemble.steps(),
                ensemble.path_count(),
                m
            )));
        }
        Ok(())
    }
}

/// Settings recorded with every solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub basis: RegressionBasis,
    pub picard_iters: usize,
    pub winsor_cap: Option<f64>,
    /// Number of paths whose terminal value was clipped by the cap.
    pub winsorized_paths: usize,
}

/// Solution `(y, z)` of the state equation under one control.
#[derive(Clone, Debug)]
pub struct TrajectoryBundle {
    /// `(N + 1) x P x n`.
    pub y: StepArray,
    /// `N x P x (n d)`.
    pub z: StepArray,
    pub control: ControlProcess,
    pub grid: TimeGrid,
    pub ensemble: EnsembleId,
    pub meta: SolverMeta,
    /// Fitted `E[y_{i+1} | F_{t_i}]` per step.
    pub fits: Vec<StepFit>,
}

impl TrajectoryBundle {
    pub fn y0(&self, path: usize) -> &[f64] {
        self.y.at(0, path)
    }

    /// Cross-path mean and variance of each `y` component per step.
    pub fn step_moments(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        moments(&self.y)
    }

    pub(crate) fn check_ensemble(&self, ensemble: &PathEnsemble) -> Result<()> {
        if self.ensemble != ensemble.id() {
            return Err(Error::EnsembleMismatch(
                "trajectory bundle was solved on a different ensemble".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn moments(a: &StepArray) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (p, w) = (a.paths(), a.width());
    (0..a.steps())
        .map(|i| {
            let s = a.step(i);
            let mean: Vec<f64> = (0..w)
                .map(|c| par::sum_paths(p, |k| s[k * w + c]) / p as f64)
                .collect();
            let var: Vec<f64> = (0..w)
                .map(|c| {
                    let ss = par::sum_paths(p, |k| (s[k * w + c] - mean[c]).powi(2));
                    if p > 1 {
                        ss / (p - 1) as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            (mean, var)
        })
        .collect()
}

/// Derivative `(Y, Z)` of the state in a control direction.
#[derive(Clone, Debug)]
pub struct VariationalSolution {
    /// `(N + 1) x P x n`, zero at the last step.
    pub y: StepArray,
    /// `N x P x (n d)`.
    pub z: StepArray,
    pub base: ControlProcess,
    /// Probe control, when the direction came from one.
    pub probe: Option<ControlProcess>,
    /// `v - u`, `N x P x m`.
    pub direction: StepArray,
    pub ensemble: EnsembleId,
}
