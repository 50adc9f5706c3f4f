//! Direction primitives on the unit sphere.
//!
//! For a point `a` and its neighbors `b_j` the unit directions
//! `(b_j - a) / |b_j - a|` tend to crowd together. Re-expressing them from
//! the tip of their mean direction spreads them over the sphere, which is
//! what the similarity kernels in [`crate::highdim`] and
//! [`crate::optimizer`] consume.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{DsneError, Result};
use crate::knn::NeighborTable;

/// Floor applied to every direction denominator.
pub const DIRECTION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitDirection {
    pub vec: Vec<f64>,
    /// Set when `|b - a| < eps`; `vec` is then (close to) the zero vector.
    pub degenerate: bool,
}

/// Mean direction and mean-corrected directions for one origin.
#[derive(Debug, Clone)]
pub struct CorrectedRow {
    pub mean_dir: Vec<f64>,
    /// Plain unit directions to each neighbor, K x dim.
    pub unit: Array2<f64>,
    /// Mean-corrected unit directions, K x dim.
    pub corrected: Array2<f64>,
    /// Neighbors whose corrected direction fell back to the plain one.
    pub degenerate: Vec<bool>,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(DsneError::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// `(b - a) / max(|b - a|, eps)`.
pub fn unit_direction(a: &[f64], b: &[f64], eps: f64) -> Result<UnitDirection> {
    check_len("unit_direction", a.len(), b.len())?;
    let diff: Vec<f64> = b.iter().zip(a).map(|(bi, ai)| bi - ai).collect();
    let len = norm(&diff);
    let denom = len.max(eps);
    Ok(UnitDirection {
        vec: diff.into_iter().map(|x| x / denom).collect(),
        degenerate: len < eps,
    })
}

/// Unit directions from `origin` to each neighbor, their mean, and the
/// directions re-seen from the tip of that mean.
///
/// A corrected direction whose denominator drops below `eps` falls back to
/// the plain unit direction.
pub fn mean_corrected_directions(
    origin: &[f64],
    neighbors: &[&[f64]],
    eps: f64,
) -> Result<CorrectedRow> {
    if neighbors.is_empty() {
        return Err(DsneError::usage(
            "mean-corrected directions need at least one neighbor",
        ));
    }
    let dim = origin.len();
    let k = neighbors.len();
    let mut unit = Array2::<f64>::zeros((k, dim));
    for (mut row, nb) in unit.outer_iter_mut().zip(neighbors) {
        let u = unit_direction(origin, nb, eps)?;
        row.iter_mut().zip(&u.vec).for_each(|(r, v)| *r = *v);
    }
    let mean_dir = unit
        .mean_axis(Axis(0))
        .expect("at least one neighbor")
        .to_vec();

    let mut corrected = Array2::<f64>::zeros((k, dim));
    let mut degenerate = vec![false; k];
    for j in 0..k {
        let diff: Vec<f64> = unit
            .row(j)
            .iter()
            .zip(&mean_dir)
            .map(|(u, m)| u - m)
            .collect();
        let len = norm(&diff);
        let mut out = corrected.row_mut(j);
        if len < eps {
            degenerate[j] = true;
            out.assign(&unit.row(j));
        } else {
            out.iter_mut().zip(&diff).for_each(|(o, d)| *o = d / len);
        }
    }
    Ok(CorrectedRow {
        mean_dir,
        unit,
        corrected,
        degenerate,
    })
}

/// Inner products of `unit_vel` with each row of `corrected`, clamped to [-1, 1].
pub fn cosines_against(unit_vel: &[f64], corrected: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_len("cosines_against", corrected.ncols(), unit_vel.len())?;
    debug_assert!((norm(unit_vel) - 1.0).abs() < 1e-9 || unit_vel.iter().all(|&x| x == 0.0));
    Ok(corrected
        .outer_iter()
        .map(|row| {
            row.iter()
                .zip(unit_vel)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .clamp(-1.0, 1.0)
        })
        .collect())
}

/// Mean-corrected neighbor directions for every point of a cloud.
#[derive(Debug, Clone)]
pub struct DirectionField {
    pub origin_count: usize,
    pub neighbor_count: usize,
    pub dim: usize,
    /// `corrected[[i, k, ..]]` is the corrected direction from `i` to its k-th neighbor.
    pub corrected: Array3<f64>,
    pub mean_dir: Array2<f64>,
    pub degenerate_count: usize,
}

impl DirectionField {
    pub fn build(points: ArrayView2<'_, f64>, table: &NeighborTable) -> Result<Self> {
        let n = points.nrows();
        check_len("direction field rows", table.n(), n)?;
        let dim = points.ncols();
        let k = table.k();
        let points = points.as_standard_layout();
        let rows: Vec<CorrectedRow> = (0..n)
            .into_par_iter()
            .map(|i| {
                let nbs: Vec<&[f64]> = table
                    .row(i)
                    .iter()
                    .map(|&j| points.row(j).to_slice().expect("standard layout"))
                    .collect();
                mean_corrected_directions(
                    points.row(i).to_slice().expect("standard layout"),
                    &nbs,
                    DIRECTION_EPS,
                )
            })
            .collect::<Result<_>>()?;

        let mut corrected = Array3::<f64>::zeros((n, k, dim));
        let mut mean_dir = Array2::<f64>::zeros((n, dim));
        let mut degenerate_count = 0;
        for (i, row) in rows.into_iter().enumerate() {
            corrected.index_axis_mut(Axis(0), i).assign(&row.corrected);
            mean_dir
                .row_mut(i)
                .iter_mut()
                .zip(&row.mean_dir)
                .for_each(|(m, v)| *m = *v);
            degenerate_count += row.degenerate.iter().filter(|&&d| d).count();
        }
        Ok(DirectionField {
            origin_count: n,
            neighbor_count: k,
            dim,
            corrected,
            mean_dir,
            degenerate_count,
        })
    }

    /// Corrected directions of point `i`, K x dim.
    pub fn row(&self, i: usize) -> ArrayView2<'_, f64> {
        self.corrected.index_axis(Axis(0), i)
    }
}
