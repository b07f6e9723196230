use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const DYKSTRA_MAX_ITERS: usize = 10_000;
const DYKSTRA_TOL: f64 = 1e-14;

/// Closed convex set of admissible control values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSet {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Intersection of `{x : normal . x <= offset}`.
    Halfspaces {
        constraints: Vec<Halfspace>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl ControlSet {
    /// One-dimensional box `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Ball { center, .. } => center.len(),
            ControlSet::Halfspaces { constraints } => {
                constraints.first().map_or(0, |h| h.normal.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSet::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(Error::Shape(
                        "box bounds must have equal nonzero length".into(),
                    ));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidInput("box requires lo <= hi".into()));
                }
            }
            ControlSet::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) {
                    return Err(Error::InvalidInput(
                        "ball requires a center and radius > 0".into(),
                    ));
                }
            }
            ControlSet::Halfspaces { constraints } => {
                let m = self.dim();
                if m == 0 {
                    return Err(Error::InvalidInput(
                        "halfspace intersection needs constraints".into(),
                    ));
                }
                for h in constraints {
                    if h.normal.len() != m || h.normal.iter().all(|c| *c == 0.0) {
                        return Err(Error::InvalidInput("bad halfspace normal".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Euclidean projection of `x` onto the set, written into `out`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ControlSet::Box { lo, hi } => {
                for i in 0..x.len() {
                    out[i] = x[i].clamp(lo[i], hi[i]);
                }
            }
            ControlSet::Ball { center, radius } => {
                let dist = x
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                if dist <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let s = radius / dist;
                    for i in 0..x.len() {
                        out[i] = center[i] + s * (x[i] - center[i]);
                    }
                }
            }
            ControlSet::Halfspaces { constraints } => {
                if constraints.len() == 1 {
                    project_halfspace(&constraints[0], x, out);
                } else {
                    dykstra(constraints, x, out);
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.project_into(x, &mut out);
        out
    }

    /// Membership with absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            ControlSet::Ball { center, radius } => {
                let dist = x
                    .iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f64>()
                    .sqrt();
                dist <= radius + tol
            }
            ControlSet::Halfspaces { constraints } => constraints
                .iter()
                .all(|h| dot(&h.normal, x) <= h.offset + tol * norm(&h.normal)),
        }
    }

    /// A point of the set: the projection of the origin.
    pub fn anchor(&self) -> Vec<f64> {
        self.project(&vec![0.0; self.dim()])
    }

    /// Axis-aligned box used to draw probe controls: the box itself, the
    /// ball's bounding box, or a cube of half-width `radius` around the anchor.
    pub fn bounding_box(&self, radius: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            ControlSet::Box { lo, hi } => (lo.clone(), hi.clone()),
            ControlSet::Ball { center, radius: r } => (
                center.iter().map(|c| c - r).collect(),
                center.iter().map(|c| c + r).collect(),
            ),
            ControlSet::Halfspaces { .. } => {
                let a = self.anchor();
                (
                    a.iter().map(|c| c - radius).collect(),
                    a.iter().map(|c| c + radius).collect(),
                )
            }
        }
    }

    /// `count` points drawn uniformly in the bounding box of half-width 1 and
    /// projected onto the set. Deterministic in `seed`.
    pub fn random_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.bounding_box(1.0);
        (0..count)
            .map(|_| {
                let x: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
                    .collect();
                self.project(&x)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_halfspace(h: &Halfspace, x: &[f64], out: &mut [f64]) {
    let excess = dot(&h.normal, x) - h.offset;
    if excess <= 0.0 {
        out.copy_from_slice(x);
    } else {
        let s = excess / dot(&h.normal, &h.normal);
        for i in 0..x.len() {
            out[i] = x[i] - s * h.normal[i];
        }
    }
}

/// Dykstra's alternating projections onto an intersection of halfspaces.
fn dykstra(constraints: &[Halfspace], x: &[f64], out: &mut [f64]) {
    let m = x.len();
    let k = constraints.len();
    let mut cur = x.to_vec();
    let mut corrections = vec![0.0; k * m];
    let mut shifted = vec![0.0; m];
    let mut next = vec![0.0; m];
    for _ in 0..DYKSTRA_MAX_ITERS {
        let prev = cur.clone();
        for (c, h) in constraints.iter().enumerate() {
            let corr = &mut corrections[c * m..(c + 1) * m];
            for i in 0..m {
                shifted[i] = cur[i] + corr[i];
            }
            project_halfspace(h, &shifted, &mut next);
            for i in 0..m {
                corr[i] = shifted[i] - next[i];
            }
            cur.copy_from_slice(&next);
        }
        let change: f64 = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
        if change <= DYKSTRA_TOL * (1.0 + norm(&cur)) {
            break;
        }
    }
    out.copy_from_slice(&cur);
}
