//! Finite-difference verification of the analytic derivatives.
//!
//! Each state is a small random problem plus one point with a random
//! non-unit `w` and a random `beta`. Derivatives are compared by the
//! relative error `|a - f| / max(|a|, |f|, floor)` using vector norms.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsneError, Result};
use crate::geometry::norm;
use crate::optimizer::{PointProblem, Problem};

pub const GRADIENT_STEP: f64 = 1e-6;
pub const HESSIAN_STEP: f64 = 1e-5;
pub const BETA_CURVATURE_STEP: f64 = 1e-3;
/// Magnitudes below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateCheck {
    pub n: usize,
    pub k: usize,
    pub map_dim: usize,
    pub point: usize,
    pub beta: f64,
    pub grad_w: f64,
    pub grad_beta: f64,
    pub hessian_w: f64,
    pub second_derivative_beta: f64,
    pub fd_second_difference_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub states: Vec<StateCheck>,
    pub max_rel_err_grad_w: f64,
    pub max_rel_err_grad_beta: f64,
    pub max_rel_err_hessian_w: f64,
    pub min_second_derivative_beta: f64,
    pub min_fd_second_difference_beta: f64,
    pub runtime_s: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, f)| a - f).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(RELATIVE_FLOOR)
}

/// Central differences of the loss in `w`.
pub fn numeric_gradient_w(pp: &PointProblem<'_>, w: &[f64], beta: f64, h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|k| {
            let mut plus = w.to_vec();
            let mut minus = w.to_vec();
            plus[k] += h;
            minus[k] -= h;
            (pp.loss(&plus, beta) - pp.loss(&minus, beta)) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the analytic gradient, column by column.
pub fn numeric_hessian_w(pp: &PointProblem<'_>, w: &[f64], beta: f64, h: f64) -> Array2<f64> {
    let d = w.len();
    let mut hess = Array2::zeros((d, d));
    for l in 0..d {
        let mut plus = w.to_vec();
        let mut minus = w.to_vec();
        plus[l] += h;
        minus[l] -= h;
        let gp = pp.full_gradient(&plus, beta);
        let gm = pp.full_gradient(&minus, beta);
        for k in 0..d {
            hess[[k, l]] = (gp[k] - gm[k]) / (2.0 * h);
        }
    }
    hess
}

pub fn numeric_gradient_beta(pp: &PointProblem<'_>, w: &[f64], beta: f64, h: f64) -> f64 {
    (pp.loss(w, beta + h) - pp.loss(w, beta - h)) / (2.0 * h)
}

pub fn second_difference_beta(pp: &PointProblem<'_>, w: &[f64], beta: f64, h: f64) -> f64 {
    (pp.loss(w, beta + h) - 2.0 * pp.loss(w, beta) + pp.loss(w, beta - h)) / (h * h)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn check_state(rng: &mut ChaCha8Rng) -> Result<StateCheck> {
    let n = rng.random_range(4..=20);
    let k = rng.random_range(2..=6usize.min(n - 1));
    let map_dim = rng.random_range(2..=3);
    let dim = rng.random_range(map_dim..=8);
    let perplexity = rng.random_range(1.0..=(k + 1) as f64);
    let x = normal_matrix(rng, n, dim);
    let v = normal_matrix(rng, n, dim);
    let y = normal_matrix(rng, n, map_dim);
    let problem = Problem::build(x.view(), v.view(), y.view(), k, perplexity, rng.random())?;

    let point = rng.random_range(0..n);
    let pp = problem.point(point);
    let scale = rng.random_range(0.3..3.0);
    let w: Vec<f64> = (0..map_dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let beta = rng.random_range(0.1..5.0);

    let grad = pp.full_gradient(&w, beta);
    let grad_fd = numeric_gradient_w(&pp, &w, beta, GRADIENT_STEP);
    let hess = pp.hessian(&w, beta);
    let hess_fd = numeric_hessian_w(&pp, &w, beta, HESSIAN_STEP);
    let gb = pp.gradient_beta(&w, beta);
    let gb_fd = numeric_gradient_beta(&pp, &w, beta, GRADIENT_STEP);
    Ok(StateCheck {
        n,
        k,
        map_dim,
        point,
        beta,
        grad_w: relative_error(&grad, &grad_fd),
        grad_beta: relative_error(&[gb], &[gb_fd]),
        hessian_w: relative_error(
            hess.as_slice().expect("owned"),
            hess_fd.as_slice().expect("owned"),
        ),
        second_derivative_beta: pp.second_derivative_beta(&w, beta),
        fd_second_difference_beta: second_difference_beta(&pp, &w, beta, BETA_CURVATURE_STEP),
    })
}

/// Checks `n_states` random states drawn from `seed`.
pub fn run_suite(n_states: usize, seed: u64) -> Result<GradcheckReport> {
    if n_states == 0 {
        return Err(DsneError::usage("gradcheck needs at least one state"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..n_states)
        .map(|_| check_state(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&StateCheck) -> f64| states.iter().map(f).fold(0.0, f64::max);
    let min = |f: fn(&StateCheck) -> f64| states.iter().map(f).fold(f64::INFINITY, f64::min);
    Ok(GradcheckReport {
        max_rel_err_grad_w: max(|s| s.grad_w),
        max_rel_err_grad_beta: max(|s| s.grad_beta),
        max_rel_err_hessian_w: max(|s| s.hessian_w),
        min_second_derivative_beta: min(|s| s.second_derivative_beta),
        min_fd_second_difference_beta: min(|s| s.fd_second_difference_beta),
        runtime_s: start.elapsed().as_secs_f64(),
        states,
    })
}
