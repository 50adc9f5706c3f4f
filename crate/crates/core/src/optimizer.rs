//! The DSNE solver.
//!
//! For each point `i` the low-dimensional distribution is
//! `q_j = exp(-2 beta_y (1 - <w_hat, dy_j>)) / Z_y` over the K neighbors,
//! with `q_self = 1 / Z_y` for the pseudo-point, where `dy_j` are the
//! mean-corrected map directions. The objective is
//! `C = sum_i sum_j p_tilde_j ln(p_j / q_j)`.
//!
//! `w_i` lives on the unit sphere and is moved along the scaled gradient
//! with momentum and per-coordinate adaptive gains; `beta_y` is moved by a
//! bisection that only fires when the entropy mismatch and the loss
//! gradient agree on the direction.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsneError, Result};
use crate::geometry::{norm, DirectionField};
use crate::highdim::{self, ConditionalP, BETA_FLOOR};
use crate::knn::{self, NeighborTable};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch_iter: usize,
    pub max_iter: usize,
    /// Early stop once the largest gradient entry stays below this for
    /// `patience` consecutive iterations.
    pub grad_tol: f64,
    pub patience: usize,
    pub perplexity: f64,
    pub k: usize,
    pub seed: u64,
    pub gain_floor: f64,
    pub inner_sweeps: usize,
    pub beta_tol: f64,
    pub beta_max_steps: usize,
    /// Added to every map-point norm when restoring embedding lengths.
    pub map_norm_stabilizer: f64,
    /// Added to every data-point norm when restoring embedding lengths.
    pub data_norm_stabilizer: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: 0.1,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            max_iter: 1000,
            grad_tol: 1e-7,
            patience: 10,
            perplexity: 3.0,
            k: 16,
            seed: 0,
            gain_floor: 0.01,
            inner_sweeps: 1,
            beta_tol: 1e-5,
            beta_max_steps: 50,
            map_norm_stabilizer: 1e-8,
            data_norm_stabilizer: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DsneError::usage(msg.to_string()));
        if !(self.eta > 0.0) {
            return bad("learning rate must be positive");
        }
        for m in [self.momentum_early, self.momentum_late] {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must lie in [0, 1)");
            }
        }
        if self.max_iter == 0 {
            return bad("max-iter must be at least 1");
        }
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        if !(self.perplexity >= 1.0) {
            return bad("perplexity must be at least 1");
        }
        if !(self.gain_floor > 0.0) || !(self.beta_tol > 0.0) {
            return bad("gain floor and beta tolerance must be positive");
        }
        Ok(())
    }

    pub fn momentum_at(&self, iter: usize) -> f64 {
        if iter < self.momentum_switch_iter {
            self.momentum_early
        } else {
            self.momentum_late
        }
    }
}

/// Low-dimensional distribution of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct QRow {
    pub q_self: f64,
    pub q: Vec<f64>,
    pub cos: Vec<f64>,
}

pub fn q_row(corrected: ArrayView2<'_, f64>, w_hat: &[f64], beta: f64) -> QRow {
    let cos: Vec<f64> = corrected
        .outer_iter()
        .map(|d| {
            d.iter()
                .zip(w_hat)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .clamp(-1.0, 1.0)
        })
        .collect();
    let row = highdim::kernel_row(&cos, beta);
    QRow {
        q_self: row.p_self,
        q: row.p,
        cos,
    }
}

/// `sum_j p_tilde_j ln(p_j / q_j)` with both probabilities floored.
pub fn dsne_loss(p_tilde: &[f64], p: &[f64], q: &[f64]) -> f64 {
    p_tilde
        .iter()
        .zip(p)
        .zip(q)
        .map(|((pt, p), q)| pt * (p.max(PROB_FLOOR).ln() - q.max(PROB_FLOOR).ln()))
        .sum()
}

/// `sum_j (p_tilde_j - q_j) (-dy_j + cos_j w_hat)`, tangent to `w_hat`.
pub fn scaled_gradient_w(
    p_tilde: &[f64],
    q: &[f64],
    cos: &[f64],
    corrected: ArrayView2<'_, f64>,
    w_hat: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; w_hat.len()];
    for (j, dy) in corrected.outer_iter().enumerate() {
        let coef = p_tilde[j] - q[j];
        for (gk, (d, w)) in g.iter_mut().zip(dy.iter().zip(w_hat)) {
            *gk += coef * (cos[j] * w - d);
        }
    }
    g
}

/// `dC/d beta_y = sum_j (p_tilde_j - q_j) 2 (1 - cos_j)`.
pub fn gradient_beta_y(p_tilde: &[f64], q: &[f64], cos: &[f64]) -> f64 {
    p_tilde
        .iter()
        .zip(q)
        .zip(cos)
        .map(|((pt, q), c)| (pt - q) * 2.0 * (1.0 - c))
        .sum()
}

/// `4 [sum q (1-cos)^2 - (sum q (1-cos))^2]`, the variance of `2(1-cos)`
/// under the full distribution (the pseudo-point carries weight zero).
pub fn second_derivative_beta_y(q: &[f64], cos: &[f64]) -> f64 {
    let (m1, m2) = q
        .iter()
        .zip(cos)
        .fold((0.0, 0.0), |(m1, m2), (q, c)| {
            let a = 1.0 - c;
            (m1 + q * a, m2 + q * a * a)
        });
    4.0 * (m2 - m1 * m1)
}

/// One point's slice of the problem.
#[derive(Debug, Clone, Copy)]
pub struct PointProblem<'a> {
    pub p_tilde: ArrayView1<'a, f64>,
    pub p: ArrayView1<'a, f64>,
    pub p_self: f64,
    pub corrected: ArrayView2<'a, f64>,
}

fn unit(w: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(w);
    (w.iter().map(|x| x / n).collect(), n)
}

impl PointProblem<'_> {
    fn p_tilde(&self) -> Vec<f64> {
        self.p_tilde.to_vec()
    }

    pub fn q(&self, w: &[f64], beta: f64) -> QRow {
        q_row(self.corrected, &unit(w).0, beta)
    }

    /// Loss contribution of this point for an arbitrary (non-zero) `w`.
    pub fn loss(&self, w: &[f64], beta: f64) -> f64 {
        let q = self.q(w, beta);
        dsne_loss(&self.p_tilde(), &self.p.to_vec(), &q.q)
    }

    pub fn scaled_gradient(&self, w: &[f64], beta: f64) -> Vec<f64> {
        let (w_hat, _) = unit(w);
        let q = q_row(self.corrected, &w_hat, beta);
        scaled_gradient_w(&self.p_tilde(), &q.q, &q.cos, self.corrected, &w_hat)
    }

    /// `dC/dw = (2 beta / |w|) * scaled gradient`.
    pub fn full_gradient(&self, w: &[f64], beta: f64) -> Vec<f64> {
        let factor = 2.0 * beta / norm(w);
        self.scaled_gradient(w, beta)
            .into_iter()
            .map(|g| factor * g)
            .collect()
    }

    pub fn hessian(&self, w: &[f64], beta: f64) -> Array2<f64> {
        let (w_hat, wn) = unit(w);
        let d = w.len();
        let q = q_row(self.corrected, &w_hat, beta);
        let pt = self.p_tilde();

        let mut e_dir = vec![0.0; d];
        let mut e_cos = 0.0;
        for (j, dy) in self.corrected.outer_iter().enumerate() {
            for (e, x) in e_dir.iter_mut().zip(dy.iter()) {
                *e += q.q[j] * x;
            }
            e_cos += q.q[j] * q.cos[j];
        }

        let mut h = Array2::<f64>::zeros((d, d));
        let c1 = 2.0 * beta / (wn * wn);
        let c2 = 4.0 * beta * beta / (wn * wn);
        for (j, dy) in self.corrected.outer_iter().enumerate() {
            let c = q.cos[j];
            let coef = pt[j] - q.q[j];
            let a: Vec<f64> = (0..d).map(|k| -dy[k] + c * w_hat[k]).collect();
            let b: Vec<f64> = (0..d)
                .map(|k| (dy[k] - e_dir[k]) - w_hat[k] * (c - e_cos))
                .collect();
            for k in 0..d {
                for l in 0..d {
                    let eye = if k == l { 1.0 } else { 0.0 };
                    let first = dy[k] * w_hat[l] + w_hat[k] * dy[l] + c * eye
                        - 3.0 * c * w_hat[k] * w_hat[l];
                    h[[k, l]] += c1 * coef * first - c2 * q.q[j] * a[k] * b[l];
                }
            }
        }
        h
    }

    pub fn gradient_beta(&self, w: &[f64], beta: f64) -> f64 {
        let q = self.q(w, beta);
        gradient_beta_y(&self.p_tilde(), &q.q, &q.cos)
    }

    pub fn second_derivative_beta(&self, w: &[f64], beta: f64) -> f64 {
        let q = self.q(w, beta);
        second_derivative_beta_y(&q.q, &q.cos)
    }
}

/// Everything the solver needs that does not change during optimization.
#[derive(Debug, Clone)]
pub struct Problem {
    pub table: NeighborTable,
    pub cond: ConditionalP,
    pub field: DirectionField,
}

impl Problem {
    pub fn new(table: NeighborTable, cond: ConditionalP, field: DirectionField) -> Result<Self> {
        if cond.n != field.origin_count || cond.k != field.neighbor_count {
            return Err(DsneError::Dimension {
                context: "problem assembly",
                expected: cond.n * cond.k,
                found: field.origin_count * field.neighbor_count,
            });
        }
        Ok(Problem { table, cond, field })
    }

    /// KNN on `x`, calibrated distributions, and the map direction field.
    pub fn build(
        x: ArrayView2<'_, f64>,
        v: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        k: usize,
        perplexity: f64,
        seed: u64,
    ) -> Result<Self> {
        check_shapes(x, v, y)?;
        let n = x.nrows();
        if k >= n {
            return Err(DsneError::usage(format!(
                "K must be smaller than the number of points (K={k}, N={n})"
            )));
        }
        let table = knn::nearest_neighbors(x, k, seed)?;
        let cond = highdim::build_conditional_p(x, v, &table, perplexity)?;
        let field = DirectionField::build(y, &table)?;
        Problem::new(table, cond, field)
    }

    pub fn n(&self) -> usize {
        self.cond.n
    }

    pub fn map_dim(&self) -> usize {
        self.field.dim
    }

    pub fn point(&self, i: usize) -> PointProblem<'_> {
        PointProblem {
            p_tilde: self.cond.p_tilde.row(i),
            p: self.cond.p.row(i),
            p_self: self.cond.p_self[i],
            corrected: self.field.row(i),
        }
    }
}

pub(crate) fn check_shapes(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<()> {
    let n = x.nrows();
    for (context, rows) in [("velocity rows", v.nrows()), ("map rows", y.nrows())] {
        if rows != n {
            return Err(DsneError::Dimension {
                context,
                expected: n,
                found: rows,
            });
        }
    }
    if v.ncols() != x.ncols() {
        return Err(DsneError::Dimension {
            context: "velocity columns",
            expected: x.ncols(),
            found: v.ncols(),
        });
    }
    if y.ncols() == 0 {
        return Err(DsneError::usage("map points need at least one coordinate"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EmbeddingState {
    /// Unit rows for active points, zero rows for masked ones.
    pub w: Array2<f64>,
    pub gains: Array2<f64>,
    /// Momentum accumulator.
    pub update: Array2<f64>,
    pub beta_y: Vec<f64>,
    pub iter: usize,
    pub active: Vec<bool>,
}

impl EmbeddingState {
    /// Rows drawn uniformly on the unit sphere from a seeded generator.
    pub fn random(n: usize, d: usize, seed: u64, active: &[bool]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Array2::<f64>::zeros((n, d));
        for (i, mut row) in w.outer_iter_mut().enumerate() {
            loop {
                row.iter_mut()
                    .for_each(|x| *x = StandardNormal.sample(&mut rng));
                let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm > 1e-12 {
                    row.mapv_inplace(|x| x / nrm);
                    break;
                }
            }
            if !active[i] {
                row.fill(0.0);
            }
        }
        Self::with_directions(w, active)
    }

    /// Starts from the given rows, normalized to unit length.
    pub fn from_directions(w0: ArrayView2<'_, f64>, active: &[bool]) -> Result<Self> {
        let mut w = w0.to_owned();
        for (i, mut row) in w.outer_iter_mut().enumerate() {
            let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !active[i] {
                row.fill(0.0);
            } else if nrm > 0.0 && nrm.is_finite() {
                row.mapv_inplace(|x| x / nrm);
            } else {
                return Err(DsneError::usage(format!(
                    "initial direction of point {i} is zero or non-finite"
                )));
            }
        }
        Ok(Self::with_directions(w, active))
    }

    fn with_directions(w: Array2<f64>, active: &[bool]) -> Self {
        let (n, d) = w.dim();
        EmbeddingState {
            w,
            gains: Array2::ones((n, d)),
            update: Array2::zeros((n, d)),
            beta_y: vec![1.0; n],
            iter: 0,
            active: active.to_vec(),
        }
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        self.w.row(i).to_slice().expect("standard layout")
    }
}

pub fn full_gradient_w(problem: &Problem, state: &EmbeddingState, i: usize) -> Vec<f64> {
    problem
        .point(i)
        .full_gradient(state.direction(i), state.beta_y[i])
}

pub fn hessian_w(problem: &Problem, state: &EmbeddingState, i: usize) -> Array2<f64> {
    problem.point(i).hessian(state.direction(i), state.beta_y[i])
}

/// Total loss over active points.
pub fn total_loss(problem: &Problem, state: &EmbeddingState) -> f64 {
    (0..problem.n())
        .into_par_iter()
        .filter(|&i| state.active[i])
        .map(|i| problem.point(i).loss(state.direction(i), state.beta_y[i]))
        .sum()
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Largest absolute scaled-gradient entry seen in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub max_grad: f64,
}

/// Momentum plus adaptive-gains step of every active direction, followed by
/// renormalization onto the unit sphere.
pub fn update_velocity_embedding(
    state: &mut EmbeddingState,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<SweepStats> {
    let d = state.w.ncols();
    let gamma = config.momentum_at(state.iter);
    let iteration = state.iter;
    let mut max_grad = 0.0_f64;

    for _ in 0..config.inner_sweeps.max(1) {
        let beta_y = &state.beta_y;
        let active = &state.active;
        let w = state.w.as_slice_mut().expect("standard layout");
        let gains = state.gains.as_slice_mut().expect("standard layout");
        let update = state.update.as_slice_mut().expect("standard layout");

        let sweep_max = w
            .par_chunks_mut(d)
            .zip(gains.par_chunks_mut(d))
            .zip(update.par_chunks_mut(d))
            .enumerate()
            .map(|(i, ((w_i, gains_i), u_i))| -> Result<f64> {
                if !active[i] {
                    return Ok(0.0);
                }
                let pp = problem.point(i);
                let q = q_row(pp.corrected, w_i, beta_y[i]);
                let g = scaled_gradient_w(&pp.p_tilde(), &q.q, &q.cos, pp.corrected, w_i);
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(DsneError::Numerical {
                        point: i,
                        iteration,
                        detail: format!("gradient {g:?} with beta_y {}", beta_y[i]),
                    });
                }
                let mut local_max = 0.0_f64;
                for k in 0..d {
                    local_max = local_max.max(g[k].abs());
                    gains_i[k] = if sign(g[k]) != sign(u_i[k]) {
                        gains_i[k] + 0.2
                    } else {
                        gains_i[k] * 0.8
                    };
                    gains_i[k] = gains_i[k].max(config.gain_floor);
                    u_i[k] = gamma * u_i[k] - config.eta * gains_i[k] * g[k];
                    w_i[k] += u_i[k];
                }
                let nrm = norm(w_i);
                if !(nrm > 0.0) || !nrm.is_finite() {
                    return Err(DsneError::Numerical {
                        point: i,
                        iteration,
                        detail: format!("direction collapsed to norm {nrm}"),
                    });
                }
                w_i.iter_mut().for_each(|x| *x /= nrm);
                Ok(local_max)
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
        max_grad = max_grad.max(sweep_max);
    }
    Ok(SweepStats { max_grad })
}

/// Conditioned bisection on one point's `beta_y`.
///
/// The search stops as soon as the loss gradient or the entropy mismatch is
/// within `tol`, or when the two have the same sign; otherwise `beta_y`
/// moves up when the entropy is too high and down when it is too low.
pub fn update_beta_for_point(
    pp: &PointProblem<'_>,
    w_hat: &[f64],
    beta_start: f64,
    perplexity: f64,
    tol: f64,
    max_steps: usize,
) -> f64 {
    let target = perplexity.ln();
    let p_tilde = pp.p_tilde();
    let mut beta = beta_start;
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    for _ in 0..max_steps {
        let q = q_row(pp.corrected, w_hat, beta);
        let g = gradient_beta_y(&p_tilde, &q.q, &q.cos);
        let dh = highdim::kernel_entropy(&q.cos, beta) - target;
        if g.abs() < tol || dh.abs() < tol || dh * g >= 0.0 {
            break;
        }
        if dh > 0.0 {
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
        beta = beta.max(BETA_FLOOR);
    }
    beta
}

pub fn update_beta_q(state: &mut EmbeddingState, problem: &Problem, config: &SolverConfig) {
    let w = &state.w;
    let active = &state.active;
    state
        .beta_y
        .par_iter_mut()
        .enumerate()
        .filter(|(i, _)| active[*i])
        .for_each(|(i, beta)| {
            *beta = update_beta_for_point(
                &problem.point(i),
                w.row(i).to_slice().expect("standard layout"),
                *beta,
                config.perplexity,
                config.beta_tol,
                config.beta_max_steps,
            );
        });
}

/// `w_i = [mean_j (|y_j| + s_map) / (|x_j| + s_data)] |v_i| w_hat_i`.
pub fn restore_norms(
    w_unit: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    map_stabilizer: f64,
    data_stabilizer: f64,
) -> Array2<f64> {
    let scale = norm_scale(x, y, map_stabilizer, data_stabilizer);
    let mut w = w_unit.to_owned();
    for (mut row, vrow) in w.outer_iter_mut().zip(v.outer_iter()) {
        let vn = vrow.iter().map(|a| a * a).sum::<f64>().sqrt();
        let wn = row.iter().map(|a| a * a).sum::<f64>().sqrt();
        if vn > 0.0 && wn > 0.0 {
            let f = scale * vn / wn;
            row.mapv_inplace(|a| a * f);
        } else {
            row.fill(0.0);
        }
    }
    w
}

/// The global factor `mean_j (|y_j| + s_map) / (|x_j| + s_data)`.
pub fn norm_scale(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    map_stabilizer: f64,
    data_stabilizer: f64,
) -> f64 {
    let n = x.nrows();
    x.outer_iter()
        .zip(y.outer_iter())
        .map(|(xr, yr)| {
            let xn = xr.iter().map(|a| a * a).sum::<f64>().sqrt();
            let yn = yr.iter().map(|a| a * a).sum::<f64>().sqrt();
            (yn + map_stabilizer) / (xn + data_stabilizer)
        })
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub loss_initial: f64,
    pub loss_final: f64,
    pub last_max_grad: f64,
}

/// Alternates direction sweeps and `beta_y` updates until the gradient
/// stays small or `max_iter` is reached.
pub fn solve(
    problem: &Problem,
    state: &mut EmbeddingState,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let loss_initial = total_loss(problem, state);
    let mut calm = 0;
    let mut converged = false;
    let mut last_max_grad = f64::NAN;
    let mut iterations = 0;
    for it in 0..config.max_iter {
        state.iter = it;
        let stats = update_velocity_embedding(state, problem, config)?;
        update_beta_q(state, problem, config);
        iterations = it + 1;
        last_max_grad = stats.max_grad;
        if stats.max_grad < config.grad_tol {
            calm += 1;
            if calm >= config.patience.max(1) {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    Ok(SolveReport {
        iterations,
        converged,
        loss_initial,
        loss_final: total_loss(problem, state),
        last_max_grad,
    })
}

#[derive(Debug, Clone)]
pub struct DsneRun {
    /// Embedding with restored lengths.
    pub w: Array2<f64>,
    pub state: EmbeddingState,
    pub report: SolveReport,
    pub problem: Problem,
}

/// Full pipeline: neighbors, distributions, optimization, norm restoration.
pub fn run_dsne(
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    config: &SolverConfig,
) -> Result<DsneRun> {
    config.validate()?;
    let problem = Problem::build(x, v, y, config.k, config.perplexity, config.seed)?;
    let state = EmbeddingState::random(problem.n(), y.ncols(), config.seed, &problem.cond.active);
    run_dsne_from(problem, state, x, v, y, config)
}

/// Like [`run_dsne`] but with a prepared problem and starting state.
pub fn run_dsne_from(
    problem: Problem,
    mut state: EmbeddingState,
    x: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    config: &SolverConfig,
) -> Result<DsneRun> {
    let report = solve(&problem, &mut state, config)?;
    let w = restore_norms(
        state.w.view(),
        x,
        v,
        y,
        config.map_norm_stabilizer,
        config.data_norm_stabilizer,
    );
    Ok(DsneRun {
        w,
        state,
        report,
        problem,
    })
}
