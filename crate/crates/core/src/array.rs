//! Step-major storage for per-path processes.

use serde::{Deserialize, Serialize};

/// Values of a process on `steps` time indices for `paths` paths, each value a
/// vector of `width` entries. Storage is step-major so that a whole time slice
/// across paths is contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepArray {
    steps: usize,
    paths: usize,
    width: usize,
    data: Vec<f64>,
}

impl StepArray {
    pub fn zeros(steps: usize, paths: usize, width: usize) -> Self {
        Self::filled(steps, paths, width, 0.0)
    }

    pub fn filled(steps: usize, paths: usize, width: usize, value: f64) -> Self {
        Self {
            steps,
            paths,
            width,
            data: vec![value; steps * paths * width],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.steps == other.steps && self.paths == other.paths && self.width == other.width
    }

    #[inline]
    pub fn at(&self, step: usize, path: usize) -> &[f64] {
        let o = (step * self.paths + path) * self.width;
        &self.data[o..o + self.width]
    }

    #[inline]
    pub fn at_mut(&mut self, step: usize, path: usize) -> &mut [f64] {
        let o = (step * self.paths + path) * self.width;
        &mut self.data[o..o + self.width]
    }

    /// All paths at one step, `paths * width` values.
    pub fn step(&self, step: usize) -> &[f64] {
        let len = self.paths * self.width;
        &self.data[step * len..(step + 1) * len]
    }

    pub fn step_mut(&mut self, step: usize) -> &mut [f64] {
        let len = self.paths * self.width;
        &mut self.data[step * len..(step + 1) * len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
            ..*self
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|a| a * factor).collect(),
            ..*self
        }
    }
}
