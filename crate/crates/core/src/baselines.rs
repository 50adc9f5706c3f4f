//! Closed-form comparison methods.
//!
//! `scvelo_embedding` weights the plain unit map directions to each neighbor
//! by a transition distribution built from plain (uncorrected) cosines and
//! subtracts the mean direction to every other map point.
//! `dsne_approximate` takes the DSNE weights and the mean-corrected map
//! directions and returns their weighted sum, which is what the DSNE
//! objective reduces to once its log-normalizer term is dropped.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsneError, Result};
use crate::geometry::{self, DirectionField, DIRECTION_EPS};
use crate::highdim::{self, CalibrationSettings, DirectionMode};
use crate::knn;
use crate::optimizer::{check_shapes, restore_norms};

/// Largest N for which the all-pairs mean direction is computed.
pub const MAX_DENSE_POINTS: usize = 50_000;

/// Below this length the summed direction is treated as cancelled.
pub const CANCELLATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Scvelo,
    DsneApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub k: usize,
    pub perplexity: f64,
    pub seed: u64,
    pub map_norm_stabilizer: f64,
    pub data_norm_stabilizer: f64,
}

impl BaselineConfig {
    /// K = 100 and perplexity `ceil(K / 3)`.
    pub fn scvelo() -> Self {
        Self::scvelo_with_k(100)
    }

    pub fn scvelo_with_k(k: usize) -> Self {
        BaselineConfig {
            method: BaselineMethod::Scvelo,
            k,
            perplexity: (k as f64 / 3.0).ceil().max(1.0),
            seed: 0,
            map_norm_stabilizer: 1e-8,
            data_norm_stabilizer: 1e-8,
        }
    }

    pub fn dsne_approx() -> Self {
        BaselineConfig {
            method: BaselineMethod::DsneApprox,
            k: 16,
            perplexity: 3.0,
            seed: 0,
            map_norm_stabilizer: 1e-8,
            data_norm_stabilizer: 1e-8,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k >= n {
            return Err(DsneError::usage(format!(
                "K must satisfy 1 <= K <= N-1 (K={}, N={n})",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub w: Array2<f64>,
    pub active: Vec<bool>,
    /// Active rows whose direction cancelled to zero.
    pub flagged: Vec<usize>,
}

pub fn scvelo_embedding(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    config: &BaselineConfig,
) -> Result<BaselineOutput> {
    check_shapes(x, v, y)?;
    let n = x.nrows();
    config.validate(n)?;
    if n > MAX_DENSE_POINTS {
        return Err(DsneError::usage(format!(
            "scvelo embedding computes an all-pairs mean direction; N={n} exceeds {MAX_DENSE_POINTS}"
        )));
    }
    let table = knn::nearest_neighbors(x, config.k, config.seed)?;
    let cond = highdim::build_conditional_p_with(
        x,
        v,
        &table,
        config.perplexity,
        DirectionMode::Plain,
        CalibrationSettings::default(),
    )?;
    let y = y.as_standard_layout();
    let d = y.ncols();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            if !cond.active[i] {
                return Ok(vec![0.0; d]);
            }
            let yi = y.row(i).to_slice().expect("standard layout");
            let mut global = vec![0.0; d];
            for j in (0..n).filter(|&j| j != i) {
                let u = geometry::unit_direction(yi, y.row(j).to_slice().expect("standard layout"), DIRECTION_EPS)?;
                global.iter_mut().zip(&u.vec).for_each(|(g, x)| *g += x);
            }
            let denom = (n - 1) as f64;
            let mut w: Vec<f64> = global.iter().map(|g| -g / denom).collect();
            for (slot, &j) in table.row(i).iter().enumerate() {
                let u = geometry::unit_direction(yi, y.row(j).to_slice().expect("standard layout"), DIRECTION_EPS)?;
                let p = cond.p_tilde[[i, slot]];
                w.iter_mut().zip(&u.vec).for_each(|(w, x)| *w += p * x);
            }
            Ok(w)
        })
        .collect::<Result<_>>()?;

    let mut w = Array2::zeros((n, d));
    let mut flagged = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if cond.active[i] && geometry::norm(&row) < CANCELLATION_EPS {
            flagged.push(i);
        }
        w.row_mut(i).iter_mut().zip(row).for_each(|(a, b)| *a = b);
    }
    Ok(BaselineOutput {
        w,
        active: cond.active,
        flagged,
    })
}

/// Unit `sum_j p_tilde_j dy_j` per point, zero where the sum cancels.
pub fn approximate_directions(
    p_tilde: ArrayView2<'_, f64>,
    field: &DirectionField,
    active: &[bool],
) -> (Array2<f64>, Vec<usize>) {
    let (n, k) = p_tilde.dim();
    let d = field.dim;
    let mut out = Array2::zeros((n, d));
    let mut flagged = Vec::new();
    for i in 0..n {
        if !active[i] {
            continue;
        }
        let dirs = field.row(i);
        let mut sum = vec![0.0; d];
        for j in 0..k {
            for (s, x) in sum.iter_mut().zip(dirs.row(j).iter()) {
                *s += p_tilde[[i, j]] * x;
            }
        }
        let len = geometry::norm(&sum);
        if len < CANCELLATION_EPS {
            flagged.push(i);
            continue;
        }
        out.row_mut(i)
            .iter_mut()
            .zip(&sum)
            .for_each(|(o, s)| *o = s / len);
    }
    (out, flagged)
}

pub fn dsne_approximate(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    config: &BaselineConfig,
) -> Result<BaselineOutput> {
    check_shapes(x, v, y)?;
    config.validate(x.nrows())?;
    let table = knn::nearest_neighbors(x, config.k, config.seed)?;
    let cond = highdim::build_conditional_p(x, v, &table, config.perplexity)?;
    let field = DirectionField::build(y, &table)?;
    let (unit, flagged) = approximate_directions(cond.p_tilde.view(), &field, &cond.active);
    let w = restore_norms(
        unit.view(),
        x,
        v,
        y,
        config.map_norm_stabilizer,
        config.data_norm_stabilizer,
    );
    Ok(BaselineOutput {
        w,
        active: cond.active,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};

    #[test]
    fn two_points_cancel_in_scvelo() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let v = array![[1.0, 0.5], [-1.0, 0.0]];
        let y = array![[0.0], [2.0]];
        let cfg = BaselineConfig {
            perplexity: 1.5,
            ..BaselineConfig::scvelo_with_k(1)
        };
        let out = scvelo_embedding(x.view(), v.view(), y.view(), &cfg).unwrap();
        assert_eq!(out.w[[0, 0]], 0.0);
        assert_eq!(out.w[[1, 0]], 0.0);
        assert_eq!(out.flagged, vec![0, 1]);
    }

    #[test]
    fn one_hot_weights_pick_that_direction() {
        let mut field = DirectionField {
            origin_count: 1,
            neighbor_count: 3,
            dim: 2,
            corrected: Array3::zeros((1, 3, 2)),
            mean_dir: Array2::zeros((1, 2)),
            degenerate_count: 0,
        };
        field
            .corrected
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&array![[1.0, 0.0], [0.0, 1.0], [-0.6, -0.8]]);
        let p = array![[0.0, 0.0, 1.0]];
        let (w, flagged) = approximate_directions(p.view(), &field, &[true]);
        assert!(flagged.is_empty());
        assert_abs_diff_eq!(w[[0, 0]], -0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(w[[0, 1]], -0.8, epsilon = 1e-15);

        field
            .corrected
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);
        let p = array![[0.5, 0.5, 0.0]];
        let (w, flagged) = approximate_directions(p.view(), &field, &[true]);
        assert_eq!(flagged, vec![0]);
        assert_eq!(w.row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn k_out_of_range() {
        let x = array![[0.0], [1.0], [2.0]];
        let v = array![[1.0], [1.0], [1.0]];
        let cfg = BaselineConfig::scvelo_with_k(3);
        assert!(scvelo_embedding(x.view(), v.view(), x.view(), &cfg).is_err());
    }
}
