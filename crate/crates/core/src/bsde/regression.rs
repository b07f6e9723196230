//! Cross-path least squares realizing `E[. | F_{t_i}]` on the grid.
//!
//! Features are functions of the normalized state `x = W_{t_i} / sqrt(t_i)`.
//! The fit is centered: feature and target means are removed, the intercept is
//! left unpenalized and the ridge acts only on the centered Gram matrix. Constant
//! samples are therefore reproduced exactly and fitted values keep the sample
//! mean of the targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sampling::PathEnsemble;
use crate::{par, Error, Result};

/// Largest accepted condition estimate of the regularized Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Range of the normalized state covered by piecewise-constant cells; the
/// outer cells absorb the tails.
const CELL_RANGE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// All monomials of total degree `<= degree` in `W_{t_i}` (spanned by
    /// products of Hermite polynomials for conditioning).
    Polynomial { degree: usize },
    /// Indicators of a hypercube partition with `cells` cells per axis.
    PiecewiseConstant { cells: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            kind: BasisKind::Polynomial { degree: 3 },
            ridge: 1e-8,
        }
    }
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            kind: BasisKind::Polynomial { degree },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidInput("ridge must be finite and >= 0".into()));
        }
        if let BasisKind::PiecewiseConstant { cells } = self.kind {
            if cells == 0 {
                return Err(Error::InvalidInput(
                    "piecewise basis needs >= 1 cell".into(),
                ));
            }
        }
        Ok(())
    }

    /// Exponent multi-indices of the non-constant polynomial features.
    fn multi_indices(degree: usize, d: usize) -> Vec<Vec<usize>> {
        fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == d {
                if cur.iter().sum::<usize>() > 0 {
                    out.push(cur.clone());
                }
                return;
            }
            for e in 0..=left {
                cur.push(e);
                rec(d, left - e, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(d, degree, &mut Vec::new(), &mut out);
        out.sort_by_key(|idx| idx.iter().sum::<usize>());
        out
    }

    fn feature_map(&self, d: usize) -> FeatureMap {
        match self.kind {
            BasisKind::Polynomial { degree } => FeatureMap::Hermite {
                degree,
                indices: Self::multi_indices(degree, d),
            },
            BasisKind::PiecewiseConstant { cells } => FeatureMap::Cells {
                cells,
                count: cells.pow(d as u32) - 1,
            },
        }
    }
}

#[derive(Clone, Debug)]
enum FeatureMap {
    Hermite {
        degree: usize,
        indices: Vec<Vec<usize>>,
    },
    Cells {
        cells: usize,
        count: usize,
    },
}

impl FeatureMap {
    fn len(&self) -> usize {
        match self {
            FeatureMap::Hermite { indices, .. } => indices.len(),
            FeatureMap::Cells { count, .. } => *count,
        }
    }

    /// Non-constant features of the normalized point `x`.
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FeatureMap::Hermite { degree, indices } => {
                let d = x.len();
                let q = *degree;
                let mut he = vec![0.0; d * (q + 1)];
                for j in 0..d {
                    he[j * (q + 1)] = 1.0;
                    if q >= 1 {
                        he[j * (q + 1) + 1] = x[j];
                    }
                    for k in 1..q {
                        he[j * (q + 1) + k + 1] =
                            x[j] * he[j * (q + 1) + k] - k as f64 * he[j * (q + 1) + k - 1];
                    }
                }
                for (f, idx) in indices.iter().enumerate() {
                    out[f] = idx
                        .iter()
                        .enumerate()
                        .map(|(j, e)| he[j * (q + 1) + e])
                        .product();
                }
            }
            FeatureMap::Cells { cells, .. } => {
                out.fill(0.0);
                let k = *cells;
                let mut flat = 0usize;
                for (j, xj) in x.iter().enumerate() {
                    let pos = ((xj + CELL_RANGE) / (2.0 * CELL_RANGE) * k as f64).floor();
                    let c = if pos.is_nan() {
                        0
                    } else {
                        pos.clamp(0.0, (k - 1) as f64) as usize
                    };
                    flat += c * k.pow(j as u32);
                }
                // cell 0 is the reference level absorbed by the intercept
                if flat > 0 {
                    out[flat - 1] = 1.0;
                }
            }
        }
    }
}

/// Coefficients of one fitted conditional expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFit {
    pub width: usize,
    /// Per-column target mean.
    pub intercept: Vec<f64>,
    /// `features x width`, applied to centered features.
    pub coef: Vec<f64>,
}

/// Factorized regression problem at one time step.
#[derive(Clone, Debug)]
pub struct StepRegression {
    step: usize,
    paths: usize,
    dim: usize,
    scale: f64,
    map: FeatureMap,
    /// Centered features, `paths x nf`.
    features: Vec<f64>,
    feature_means: Vec<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    condition: f64,
}

impl StepRegression {
    pub fn new(ensemble: &PathEnsemble, step: usize, basis: &RegressionBasis) -> Result<Self> {
        basis.validate()?;
        let paths = ensemble.path_count();
        let dim = ensemble.dim();
        let t = ensemble.grid().t(step);
        let map = if step == 0 {
            // F_0 is trivial: constants only
            FeatureMap::Hermite {
                degree: 0,
                indices: Vec::new(),
            }
        } else {
            basis.feature_map(dim)
        };
        let nf = map.len();
        let scale = if step == 0 { 1.0 } else { t.sqrt() };
        if nf == 0 {
            return Ok(Self {
                step,
                paths,
                dim,
                scale,
                map,
                features: Vec::new(),
                feature_means: Vec::new(),
                chol: None,
                condition: 1.0,
            });
        }

        let mut features = vec![0.0; paths * nf];
        par::for_each_path(&mut features, nf, |k, row| {
            let x: Vec<f64> = ensemble.w(k, step).iter().map(|w| w / scale).collect();
            map.eval(&x, row);
        });
        let sums = par::map_blocks(paths, |r| {
            let mut s = vec![0.0; nf];
            for k in r {
                for f in 0..nf {
                    s[f] += features[k * nf + f];
                }
            }
            s
        });
        let mut feature_means = vec![0.0; nf];
        for s in &sums {
            for f in 0..nf {
                feature_means[f] += s[f];
            }
        }
        for m in &mut feature_means {
            *m /= paths as f64;
        }
        par::for_each_path(&mut features, nf, |_, row| {
            for f in 0..nf {
                row[f] -= feature_means[f];
            }
        });

        let partial = par::map_blocks(paths, |r| {
            let mut g = vec![0.0; nf * nf];
            for k in r {
                let row = &features[k * nf..(k + 1) * nf];
                for a in 0..nf {
                    for b in 0..=a {
                        g[a * nf + b] += row[a] * row[b];
                    }
                }
            }
            g
        });
        let mut gram = DMatrix::<f64>::zeros(nf, nf);
        for g in &partial {
            for a in 0..nf {
                for b in 0..=a {
                    gram[(a, b)] += g[a * nf + b];
                }
            }
        }
        for a in 0..nf {
            for b in 0..a {
                gram[(a, b)] /= paths as f64;
                gram[(b, a)] = gram[(a, b)];
            }
            gram[(a, a)] = gram[(a, a)] / paths as f64 + basis.ridge;
        }
        let chol = gram.cholesky().ok_or(Error::Regression {
            step,
            condition: f64::INFINITY,
        })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| {
            (lo.min(x.abs()), hi.max(x.abs()))
        });
        let condition = if lo > 0.0 {
            (hi / lo).powi(2)
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Regression { step, condition });
        }
        Ok(Self {
            step,
            paths,
            dim,
            scale,
            map,
            features,
            feature_means,
            chol: Some(chol),
            condition,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn feature_count(&self) -> usize {
        self.map.len()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Fits `samples` (`paths x width`, row per path).
    pub fn fit(&self, samples: &[f64], width: usize) -> Result<StepFit> {
        if samples.len() != self.paths * width {
            return Err(Error::Shape(format!(
                "regression samples have {} values, expected {} x {}",
                samples.len(),
                self.paths,
                width
            )));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "regression sample",
                step: self.step,
            });
        }
        let p = self.paths as f64;
        let sums = par::map_blocks(self.paths, |r| {
            let mut s = vec![0.0; width];
            for k in r {
                for c in 0..width {
                    s[c] += samples[k * width + c];
                }
            }
            s
        });
        let mut intercept = vec![0.0; width];
        for s in &sums {
            for c in 0..width {
                intercept[c] += s[c];
            }
        }
        for m in &mut intercept {
            *m /= p;
        }
        let nf = self.map.len();
        let Some(chol) = &self.chol else {
            return Ok(StepFit {
                width,
                intercept,
                coef: Vec::new(),
            });
        };
        let partial = par::map_blocks(self.paths, |r| {
            let mut acc = vec![0.0; nf * width];
            for k in r {
                let row = &self.features[k * nf..(k + 1) * nf];
                for c in 0..width {
                    let yc = samples[k * width + c] - intercept[c];
                    if yc != 0.0 {
                        for f in 0..nf {
                            acc[f * width + c] += row[f] * yc;
                        }
                    }
                }
            }
            acc
        });
        let mut rhs = DMatrix::<f64>::zeros(nf, width);
        for acc in &partial {
            for f in 0..nf {
                for c in 0..width {
                    rhs[(f, c)] += acc[f * width + c];
                }
            }
        }
        rhs /= p;
        let beta = chol.solve(&rhs);
        let mut coef = vec![0.0; nf * width];
        for f in 0..nf {
            for c in 0..width {
                coef[f * width + c] = beta[(f, c)];
            }
        }
        Ok(StepFit {
            width,
            intercept,
            coef,
        })
    }

    /// Fitted values on the ensemble paths, `paths x width`.
    pub fn values(&self, fit: &StepFit) -> Vec<f64> {
        let width = fit.width;
        let nf = self.map.len();
        let mut out = vec![0.0; self.paths * width];
        par::for_each_path(&mut out, width, |k, row| {
            row.copy_from_slice(&fit.intercept);
            if !fit.coef.is_empty() {
                let feat = &self.features[k * nf..(k + 1) * nf];
                for c in 0..width {
                    let mut s = 0.0;
                    for f in 0..nf {
                        s += feat[f] * fit.coef[f * width + c];
                    }
                    row[c] += s;
                }
            }
        });
        out
    }

    /// Fit and evaluate in one go.
    pub fn project(&self, samples: &[f64], width: usize) -> Result<Vec<f64>> {
        let fit = self.fit(samples, width)?;
        Ok(self.values(&fit))
    }

    /// Evaluates a fit at an arbitrary `W_{t_i}` (for example on another ensemble).
    pub fn evaluate(&self, fit: &StepFit, w: &[f64]) -> Vec<f64> {
        let mut out = fit.intercept.clone();
        let nf = self.map.len();
        if nf == 0 || fit.coef.is_empty() {
            return out;
        }
        debug_assert_eq!(w.len(), self.dim);
        let x: Vec<f64> = w.iter().map(|v| v / self.scale).collect();
        let mut feat = vec![0.0; nf];
        self.map.eval(&x, &mut feat);
        for f in 0..nf {
            feat[f] -= self.feature_means[f];
        }
        // same summation order as `values`, so on-ensemble evaluations agree bitwise
        for c in 0..fit.width {
            let mut s = 0.0;
            for f in 0..nf {
                s += feat[f] * fit.coef[f * fit.width + c];
            }
            out[c] += s;
        }
        out
    }

    /// The fitted function expressed in raw `W_{t_i}` monomials (`d = 1`,
    /// polynomial basis only): returns `a_0, a_1, ...` with
    /// `E[. | W_{t_i} = w] = sum_k a_k w^k` for column `col`.
    pub fn monomial_coefficients(&self, fit: &StepFit, col: usize) -> Option<Vec<f64>> {
        let FeatureMap::Hermite { degree, .. } = &self.map else {
            return None;
        };
        if self.dim != 1 {
            return None;
        }
        // evaluate at degree + 1 nodes and interpolate exactly
        let q = *degree;
        let nodes: Vec<f64> = (0..=q).map(|k| k as f64 - q as f64 / 2.0).collect();
        let vals: Vec<f64> = nodes
            .iter()
            .map(|w| self.evaluate(fit, &[*w])[col])
            .collect();
        let vand = DMatrix::from_fn(q + 1, q + 1, |r, c| nodes[r].powi(c as i32));
        let sol = vand.lu().solve(&DVector::from_vec(vals))?;
        Some(sol.iter().copied().collect())
    }
}

/// Regressions for every step `0..N` of one ensemble.
#[derive(Clone, Debug)]
pub struct Regressors {
    steps: Vec<StepRegression>,
    basis: RegressionBasis,
}

impl Regressors {
    pub fn new(ensemble: &PathEnsemble, basis: &RegressionBasis) -> Result<Self> {
        let steps = (0..ensemble.steps())
            .map(|i| StepRegression::new(ensemble, i, basis))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            steps,
            basis: basis.clone(),
        })
    }

    pub fn at(&self, step: usize) -> &StepRegression {
        &self.steps[step]
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }
}

/// Fits `samples` at step `step` and returns the fitted values, `paths x width`.
pub fn regress(
    ensemble: &PathEnsemble,
    step: usize,
    samples: &[f64],
    width: usize,
    basis: &RegressionBasis,
) -> Result<(StepFit, Vec<f64>)> {
    let reg = StepRegression::new(ensemble, step, basis)?;
    let fit = reg.fit(samples, width)?;
    let values = reg.values(&fit);
    Ok((fit, values))
}
