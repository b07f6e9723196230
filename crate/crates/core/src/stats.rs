//! Sample means with standard errors.

use serde::{Deserialize, Serialize};

use crate::par;

/// Absolute slack added to zero tests so that estimates with a vanishing
/// standard error are not failed on floating-point noise.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// A Monte Carlo estimate and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    /// Mean and standard error of `f(path)` over `0..n` paths.
    pub fn from_paths<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let (value, stderr) = mean_stderr(n, f);
        Self { value, stderr }
    }

    /// Standard error of the difference of two independent-looking estimates.
    pub fn combined_stderr(&self, other: &Self) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// `|value| <= k * stderr + floor`.
    pub fn is_zero_within(&self, k: f64, floor: f64) -> bool {
        self.value.abs() <= k * self.stderr + floor
    }
}

/// Sample mean and standard error (`sd / sqrt(n)`) of `f` over `0..n`.
pub fn mean_stderr<F>(n: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = par::sum_paths(n, &f) / nf;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = par::sum_paths(n, |k| {
        let d = f(k) - mean;
        d * d
    });
    (mean, (ss / (nf - 1.0) / nf).sqrt())
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
