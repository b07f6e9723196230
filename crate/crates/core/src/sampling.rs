//! Time grid and seeded Brownian ensembles.
//!
//! Each path (or antithetic pair) draws from its own ChaCha8 stream selected by
//! `(seed, index)`, so paths can be generated in any order and on any number of
//! workers, and a larger ensemble with the same seed extends a smaller one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

/// Uniform grid `0 = t_0 < ... < t_N = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput("step count must be >= 1".into()));
        }
        let dt = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        nodes[steps] = horizon;
        Ok(Self {
            horizon,
            steps,
            dt,
            nodes,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Length of step `i`, `t_{i+1} - t_i`.
    pub fn step_len(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }
}

/// Identifies an ensemble; solves on different ensembles must not be mixed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleId {
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub dim: usize,
    pub antithetic: bool,
    pub horizon_bits: u64,
}

/// Brownian increments and cumulative paths on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
    antithetic: bool,
    /// `paths x steps x dim`, path-major.
    increments: Vec<f64>,
    /// `paths x (steps + 1) x dim`, path-major, `W_0 = 0`.
    w: Vec<f64>,
}

fn fill_path(grid: &TimeGrid, dim: usize, seed: u64, stream: u64, dw: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for i in 0..grid.steps() {
        let sd = grid.step_len(i).sqrt();
        for j in 0..dim {
            let x: f64 = StandardNormal.sample(&mut rng);
            dw[i * dim + j] = sd * x;
        }
    }
}

/// Generates an ensemble of `path_count` Brownian paths of dimension `dim`.
pub fn sample_ensemble(
    grid: &TimeGrid,
    dim: usize,
    path_count: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathEnsemble> {
    if dim == 0 {
        return Err(Error::InvalidInput(
            "Brownian dimension must be >= 1".into(),
        ));
    }
    if path_count < 2 {
        return Err(Error::InvalidInput("path_count must be >= 2".into()));
    }
    if antithetic && !path_count.is_multiple_of(2) {
        return Err(Error::InvalidInput(
            "antithetic sampling needs an even path_count".into(),
        ));
    }
    let n = grid.steps();
    let per_path = n * dim;
    let mut increments = vec![0.0; path_count * per_path];
    if antithetic {
        par::for_each_path(&mut increments, 2 * per_path, |pair, chunk| {
            let (a, b) = chunk.split_at_mut(per_path);
            fill_path(grid, dim, seed, pair as u64, a);
            for (x, y) in b.iter_mut().zip(a.iter()) {
                *x = -*y;
            }
        });
    } else {
        par::for_each_path(&mut increments, per_path, |k, chunk| {
            fill_path(grid, dim, seed, k as u64, chunk);
        });
    }
    let per_w = (n + 1) * dim;
    let mut w = vec![0.0; path_count * per_w];
    par::for_each_path(&mut w, per_w, |k, chunk| {
        let dw = &increments[k * per_path..(k + 1) * per_path];
        for i in 0..n {
            for j in 0..dim {
                chunk[(i + 1) * dim + j] = chunk[i * dim + j] + dw[i * dim + j];
            }
        }
    });
    // store increments as differences of the rounded cumulative values so that
    // W_{i+1} - W_i == Delta W_i holds bitwise
    par::for_each_path(&mut increments, per_path, |k, chunk| {
        let wk = &w[k * per_w..(k + 1) * per_w];
        for i in 0..n {
            for j in 0..dim {
                chunk[i * dim + j] = wk[(i + 1) * dim + j] - wk[i * dim + j];
            }
        }
    });
    Ok(PathEnsemble {
        grid: grid.clone(),
        paths: path_count,
        dim,
        seed,
        antithetic,
        increments,
        w,
    })
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn path_count(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    pub fn id(&self) -> EnsembleId {
        EnsembleId {
            seed: self.seed,
            paths: self.paths,
            steps: self.grid.steps(),
            dim: self.dim,
            antithetic: self.antithetic,
            horizon_bits: self.grid.horizon().to_bits(),
        }
    }

    /// `Delta W_i` on `path`.
    #[inline]
    pub fn dw(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * self.grid.steps() + step) * self.dim;
        &self.increments[o..o + self.dim]
    }

    /// `W_{t_i}` on `path`.
    #[inline]
    pub fn w(&self, path: usize, step: usize) -> &[f64] {
        let o = (path * (self.grid.steps() + 1) + step) * self.dim;
        &self.w[o..o + self.dim]
    }

    /// Whole discrete path `W_{t_0..t_N}` of one path.
    pub fn path(&self, path: usize) -> &[f64] {
        let per = (self.grid.steps() + 1) * self.dim;
        &self.w[path * per..(path + 1) * per]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.w
    }

    /// Copy with the future increments `Delta W_j`, `j >= from_step`, replaced by
    /// those of `other` (same shape). Earlier increments are untouched.
    pub fn splice_future(&self, other: &PathEnsemble, from_step: usize) -> Result<PathEnsemble> {
        if self.paths != other.paths || self.dim != other.dim || self.grid != other.grid {
            return Err(Error::EnsembleMismatch("splice needs equal shapes".into()));
        }
        let mut out = self.clone();
        let n = self.grid.steps();
        for k in 0..self.paths {
            for i in from_step..n {
                for j in 0..self.dim {
                    let o = (k * n + i) * self.dim + j;
                    out.increments[o] = other.increments[o];
                }
            }
            for i in from_step..n {
                for j in 0..self.dim {
                    let o = (k * (n + 1) + i) * self.dim + j;
                    let inc = (k * n + i) * self.dim + j;
                    out.w[o + self.dim] = out.w[o] + out.increments[inc];
                    out.increments[inc] = out.w[o + self.dim] - out.w[o];
                }
            }
        }
        // mixed ensemble: mark it so it never compares equal to either parent
        out.seed = self.seed ^ other.seed.rotate_left(17) ^ (from_step as u64);
        Ok(out)
    }
}
