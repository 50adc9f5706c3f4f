//! High-dimensional conditional distributions.
//!
//! Each point `i` gets a distribution over its K neighbors plus a
//! pseudo-point placed along its own velocity. Neighbor weights are
//! `exp(-2 beta (1 - cos))`, where `cos` compares the unit velocity with the
//! (optionally mean-corrected) unit direction to the neighbor, and the
//! pseudo-point contributes the constant 1 to the normalizer. `beta` is
//! calibrated per point so the distribution reaches a requested perplexity.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsneError, Result};
use crate::geometry::{self, DIRECTION_EPS};
use crate::knn::NeighborTable;

/// Smallest inverse variance the bandwidth search will return.
pub const BETA_FLOOR: f64 = 1e-12;

/// Probabilities of one point: the pseudo-point and each neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct PRow {
    pub p_self: f64,
    pub p: Vec<f64>,
}

impl PRow {
    pub fn sum(&self) -> f64 {
        self.p_self + self.p.iter().sum::<f64>()
    }
}

/// Normalizer `Z = 1 + sum_j exp(-2 beta (1 - cos_j))`.
pub(crate) fn normalizer(cosines: &[f64], beta: f64) -> f64 {
    1.0 + cosines
        .iter()
        .map(|c| (-2.0 * beta * (1.0 - c)).exp())
        .sum::<f64>()
}

pub fn p_row(cosines: &[f64], beta: f64) -> Result<PRow> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(DsneError::usage(format!(
            "inverse variance must be positive and finite, got {beta}"
        )));
    }
    Ok(kernel_row(cosines, beta))
}

pub(crate) fn kernel_row(cosines: &[f64], beta: f64) -> PRow {
    let z = normalizer(cosines, beta);
    PRow {
        p_self: 1.0 / z,
        p: cosines
            .iter()
            .map(|c| (-2.0 * beta * (1.0 - c)).exp() / z)
            .collect(),
    }
}

/// Neighbor weights renormalized without the pseudo-point.
///
/// Shifted by the largest cosine so the row stays defined when every
/// weight would underflow.
pub fn neighbor_only_row(cosines: &[f64], beta: f64) -> Vec<f64> {
    let c_max = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = cosines
        .iter()
        .map(|c| (-2.0 * beta * (c_max - c)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Shannon entropy in nats over the pseudo-point and neighbors; `0 ln 0 = 0`.
pub fn entropy_of_row(p_self: f64, p: &[f64]) -> f64 {
    std::iter::once(&p_self)
        .chain(p)
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

/// Entropy of the kernel row evaluated in log space.
pub(crate) fn kernel_entropy(cosines: &[f64], beta: f64) -> f64 {
    let row = kernel_row(cosines, beta);
    let log_z = normalizer(cosines, beta).ln();
    log_z
        + 2.0
            * beta
            * row
                .p
                .iter()
                .zip(cosines)
                .map(|(p, c)| p * (1.0 - c))
                .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            tol: 1e-5,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub beta: f64,
    pub row: PRow,
    pub entropy: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Finds `beta` such that the row's entropy equals `ln(perplexity)`.
///
/// Starts at `beta = 1`, doubles or halves until the target is bracketed,
/// then bisects. If `tol` is not reached within `max_iter` steps the best
/// iterate is returned with `converged == false`.
pub fn calibrate_beta_x(
    cosines: &[f64],
    perplexity: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Calibration> {
    let k = cosines.len();
    if k == 0 {
        return Err(DsneError::usage("bandwidth search needs at least one neighbor"));
    }
    let upper = (k + 1) as f64;
    if !(perplexity >= 1.0 && perplexity <= upper * (1.0 + 1e-12)) {
        return Err(DsneError::usage(format!(
            "perplexity {perplexity} outside [1, K+1] = [1, {upper}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(DsneError::usage("tolerance must be positive"));
    }

    let target = perplexity.ln();
    let mut beta = 1.0_f64;
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let mut best = (f64::INFINITY, beta, f64::NAN);
    let mut converged = false;
    let mut iterations = 0;
    let mut at_floor = false;

    while iterations < max_iter {
        iterations += 1;
        let h = kernel_entropy(cosines, beta);
        let diff = h - target;
        if diff.abs() < best.0 {
            best = (diff.abs(), beta, h);
        }
        if diff.abs() <= tol {
            converged = true;
            break;
        }
        if diff > 0.0 {
            lo = Some(beta);
            beta = match hi {
                Some(h) => 0.5 * (beta + h),
                None => 2.0 * beta,
            };
        } else {
            hi = Some(beta);
            beta = match lo {
                Some(l) => 0.5 * (beta + l),
                None => 0.5 * beta,
            };
        }
        if beta <= BETA_FLOOR {
            if at_floor {
                break;
            }
            at_floor = true;
            beta = BETA_FLOOR;
        }
        if !beta.is_finite() {
            break;
        }
    }

    let (_, beta, entropy) = best;
    Ok(Calibration {
        beta,
        row: kernel_row(cosines, beta),
        entropy,
        converged,
        iterations,
    })
}

/// Which neighbor directions the cosines are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionMode {
    /// Directions re-seen from the tip of the local mean direction.
    MeanCorrected,
    /// Plain unit directions to each neighbor.
    Plain,
}

/// Calibrated high-dimensional distributions for every point.
#[derive(Debug, Clone)]
pub struct ConditionalP {
    pub n: usize,
    pub k: usize,
    /// Neighbor-only distribution, rows sum to one.
    pub p_tilde: Array2<f64>,
    /// Neighbor part of the full distribution.
    pub p: Array2<f64>,
    /// Pseudo-point probability `1 / Z`.
    pub p_self: Vec<f64>,
    pub beta_x: Vec<f64>,
    pub cos_x: Array2<f64>,
    /// `false` for zero-velocity rows, which are excluded from the problem.
    pub active: Vec<bool>,
    pub entropy: Vec<f64>,
    pub unconverged: usize,
}

impl ConditionalP {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Unit velocity rows, or `None` for rows with zero (or non-finite) norm.
pub(crate) fn unit_velocities(v: ArrayView2<'_, f64>) -> Vec<Option<Vec<f64>>> {
    v.outer_iter()
        .map(|row| {
            let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            (nrm > 0.0 && nrm.is_finite()).then(|| row.iter().map(|x| x / nrm).collect())
        })
        .collect()
}

pub fn build_conditional_p(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    table: &NeighborTable,
    perplexity: f64,
) -> Result<ConditionalP> {
    build_conditional_p_with(
        x,
        v,
        table,
        perplexity,
        DirectionMode::MeanCorrected,
        CalibrationSettings::default(),
    )
}

pub fn build_conditional_p_with(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    table: &NeighborTable,
    perplexity: f64,
    mode: DirectionMode,
    settings: CalibrationSettings,
) -> Result<ConditionalP> {
    let (n, dim) = x.dim();
    if v.dim() != (n, dim) {
        return Err(DsneError::Dimension {
            context: "velocity matrix shape",
            expected: n * dim,
            found: v.len(),
        });
    }
    if table.n() != n {
        return Err(DsneError::Dimension {
            context: "neighbor table rows",
            expected: n,
            found: table.n(),
        });
    }
    let k = table.k();
    let unit_v = unit_velocities(v);
    if unit_v.iter().all(Option::is_none) {
        return Err(DsneError::usage("nothing to embed: every velocity is zero"));
    }
    let x = x.as_standard_layout();

    let rows: Vec<Option<(Vec<f64>, Calibration)>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let Some(vhat) = unit_v[i].as_ref() else {
                return Ok(None);
            };
            let nbs: Vec<&[f64]> = table
                .row(i)
                .iter()
                .map(|&j| x.row(j).to_slice().expect("standard layout"))
                .collect();
            let dirs = geometry::mean_corrected_directions(
                x.row(i).to_slice().expect("standard layout"),
                &nbs,
                DIRECTION_EPS,
            )?;
            let against = match mode {
                DirectionMode::MeanCorrected => dirs.corrected.view(),
                DirectionMode::Plain => dirs.unit.view(),
            };
            let cos = geometry::cosines_against(vhat, against)?;
            let cal = calibrate_beta_x(&cos, perplexity, settings.tol, settings.max_iter)?;
            Ok(Some((cos, cal)))
        })
        .collect::<Result<_>>()?;

    let mut out = ConditionalP {
        n,
        k,
        p_tilde: Array2::zeros((n, k)),
        p: Array2::zeros((n, k)),
        p_self: vec![0.0; n],
        beta_x: vec![1.0; n],
        cos_x: Array2::zeros((n, k)),
        active: vec![false; n],
        entropy: vec![0.0; n],
        unconverged: 0,
    };
    for (i, row) in rows.into_iter().enumerate() {
        let Some((cos, cal)) = row else { continue };
        let tilde = neighbor_only_row(&cos, cal.beta);
        for j in 0..k {
            out.cos_x[[i, j]] = cos[j];
            out.p[[i, j]] = cal.row.p[j];
            out.p_tilde[[i, j]] = tilde[j];
        }
        out.p_self[i] = cal.row.p_self;
        out.beta_x[i] = cal.beta;
        out.entropy[i] = cal.entropy;
        out.active[i] = true;
        if !cal.converged {
            out.unconverged += 1;
        }
    }
    Ok(out)
}
