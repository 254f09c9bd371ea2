//! Shared domain types: decision and objective vectors, box bounds and
//! Pareto dominance.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in decision space. Depending on context the coordinates are either
/// physical (inside [`Bounds`]) or normalized to the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionVector(pub Vec<f64>);

/// Objective values, all minimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(pub Vec<f64>);

impl Deref for DecisionVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for ObjectiveVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DecisionVector {
    fn from(v: Vec<f64>) -> Self {
        DecisionVector(v)
    }
}

impl From<Vec<f64>> for ObjectiveVector {
    fn from(v: Vec<f64>) -> Self {
        ObjectiveVector(v)
    }
}

/// One true (expensive) evaluation. `decision` is in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSolution {
    pub decision: DecisionVector,
    pub objectives: ObjectiveVector,
    /// Cumulative evaluation count at which this evaluation happened (1-based).
    pub eval_index: usize,
    pub task_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::usage("bounds must have at least one dimension"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::usage(format!(
                    "bound {i}: lower {l} must be finite and below upper {u}"
                )));
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// The unit cube `[0, 1]^d`.
    pub fn unit(d: usize) -> Self {
        Bounds {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    /// The five microphysics parameter ranges used by the default calibration
    /// instance: cssca, porsl, pfac, ice_stokes_fac, dimax.
    pub fn microphysics() -> Self {
        Bounds {
            lower: vec![5e-6, 0.5, 1.0, 8000.0, 3e-4],
            upper: vec![2e-5, 2.0, 3.0, 30000.0, 8e-4],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        for (i, v) in x.iter().enumerate() {
            if !(*v >= self.lower[i] && *v <= self.upper[i]) {
                return Err(Error::OutOfBounds {
                    index: i,
                    value: *v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// Map a physical point to `[0, 1]^d`.
    pub fn normalize(&self, x: &[f64]) -> Result<DecisionVector> {
        self.check(x)?;
        Ok(DecisionVector(
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (l, u))| ((v - l) / (u - l)).clamp(0.0, 1.0))
                .collect(),
        ))
    }

    /// Inverse of [`Bounds::normalize`]. Input must lie in the unit cube.
    pub fn denormalize(&self, u: &[f64]) -> Result<DecisionVector> {
        Bounds::unit(self.dim()).check(u)?;
        Ok(DecisionVector(
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(t, (l, h))| (l + t * (h - l)).clamp(*l, *h))
                .collect(),
        ))
    }

    /// Normalize with clipping, for points that may come from a task with
    /// different bounds.
    pub fn normalize_clipped(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| ((v - l) / (u - l)).clamp(0.0, 1.0))
            .collect()
    }
}

/// Free-function form of [`Bounds::normalize`].
pub fn normalize_decision(x: &DecisionVector, bounds: &Bounds) -> Result<DecisionVector> {
    bounds.normalize(x)
}

/// Pareto dominance for minimization. Equal vectors do not dominate each other.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Indices of the non-dominated members of `points`.
pub fn non_dominated_indices(points: &[&[f64]]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .enumerate()
                .any(|(j, q)| j != i && dominates_unchecked(q, points[i]))
        })
        .collect()
}
