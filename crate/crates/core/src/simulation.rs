//! Synthetic chain data, accuracy metrics and the benchmark harness.
//!
//! Both generators lay out `N = 3 * N_s` points as three chains that start
//! at `0`, `50 * 1` and `160 * 1` and advance by one velocity row per step.
//!
//! Random draws come from ChaCha8 seeded with the run seed, one stream per
//! matrix: stream 0 for the velocity rows (`V` or `W_true`), stream 1 for
//! the projection `U`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsneError, Result};
use crate::registry::{EmbedInput, MethodParams, MethodRegistry};

pub const CHAIN_STARTS: [f64; 3] = [0.0, 50.0, 160.0];
pub const VELOCITY_STREAM: u64 = 0;
pub const PROJECTION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Exact high-dimensional velocities; map points come from elsewhere.
    ExactVelocity,
    /// Planted map points and embeddings projected up to high dimension.
    ExactEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub mode: SimMode,
    /// Points per chain.
    pub n_s: usize,
    /// High dimension D.
    pub dim: usize,
    /// Map dimension d.
    pub map_dim: usize,
    /// Standard deviation of velocity entries.
    pub sigma: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn exact_embedding(n_s: usize, dim: usize, map_dim: usize, seed: u64) -> Self {
        SimSpec {
            mode: SimMode::ExactEmbedding,
            n_s,
            dim,
            map_dim,
            sigma: 6.0,
            seed,
        }
    }

    pub fn exact_velocity(n_s: usize, dim: usize, seed: u64) -> Self {
        SimSpec {
            mode: SimMode::ExactVelocity,
            n_s,
            dim,
            map_dim: dim,
            sigma: 6.0,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        3 * self.n_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s < 2 {
            return Err(DsneError::usage(format!(
                "each chain needs at least 2 points, got N_s={}",
                self.n_s
            )));
        }
        if self.mode == SimMode::ExactEmbedding && (self.map_dim == 0 || self.map_dim > self.dim) {
            return Err(DsneError::usage(format!(
                "need D >= d >= 1 for the projection (D={}, d={})",
                self.dim, self.map_dim
            )));
        }
        if self.dim == 0 || !(self.sigma > 0.0) {
            return Err(DsneError::usage("D must be positive and sigma > 0"));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Three chains: row `c*N_s` is the chain start, then
/// `row[c*N_s + i + 1] = row[c*N_s + i] + step[c*N_s + i]`.
pub fn chain_points(steps: ArrayView2<'_, f64>, n_s: usize) -> Array2<f64> {
    let (n, dim) = steps.dim();
    debug_assert_eq!(n, 3 * n_s);
    let mut pts = Array2::<f64>::zeros((n, dim));
    for (c, start) in CHAIN_STARTS.iter().enumerate() {
        let base = c * n_s;
        pts.row_mut(base).fill(*start);
        for i in 0..n_s - 1 {
            let next = &pts.row(base + i) + &steps.row(base + i);
            pts.row_mut(base + i + 1).assign(&next);
        }
    }
    pts
}

/// Data points and exact velocities: `V ~ N(0, sigma^2)`, chains in D dims.
pub fn simulate_chains_highdim(spec: &SimSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, VELOCITY_STREAM);
    let v = normal_matrix(spec.n(), spec.dim, spec.sigma, &mut rng);
    let x = chain_points(v.view(), spec.n_s);
    Ok((x, v))
}

#[derive(Debug, Clone)]
pub struct PlantedSim {
    pub x: Array2<f64>,
    pub v: Array2<f64>,
    pub y: Array2<f64>,
    pub w_true: Array2<f64>,
    /// d x D projection.
    pub u: Array2<f64>,
}

/// Planted map points `Y` (chains driven by `W_true`) projected as
/// `X = Y U`, `V = W_true U` with standard-normal `U`.
pub fn simulate_planted_embedding(spec: &SimSpec) -> Result<PlantedSim> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, VELOCITY_STREAM);
    let w_true = normal_matrix(spec.n(), spec.map_dim, spec.sigma, &mut rng);
    let y = chain_points(w_true.view(), spec.n_s);
    let mut rng = stream_rng(spec.seed, PROJECTION_STREAM);
    let u = Array2::from_shape_simple_fn((spec.map_dim, spec.dim), || {
        StandardNormal.sample(&mut rng)
    });
    Ok(PlantedSim {
        x: y.dot(&u),
        v: w_true.dot(&u),
        y,
        w_true,
        u,
    })
}

/// Mean cosine between rows and the number of pairs that were skipped
/// because one side was zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

fn row_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let c: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    Some(c.clamp(-1.0, 1.0))
}

fn mean_cosine(pairs: impl Iterator<Item = (Vec<f64>, Vec<f64>)>) -> Result<Accuracy> {
    let (mut total, mut used, mut excluded) = (0.0, 0, 0);
    for (a, b) in pairs {
        match row_cosine(&a, &b) {
            Some(c) => {
                total += c;
                used += 1;
            }
            None => excluded += 1,
        }
    }
    if used == 0 {
        return Err(DsneError::usage("accuracy undefined: every row is zero"));
    }
    Ok(Accuracy {
        value: total / used as f64,
        used,
        excluded,
    })
}

/// Mean cosine between recovered and true embedding rows; zero rows are
/// excluded and counted.
pub fn accuracy_exact(w: ArrayView2<'_, f64>, w_true: ArrayView2<'_, f64>) -> Result<Accuracy> {
    if w.dim() != w_true.dim() {
        return Err(DsneError::Dimension {
            context: "accuracy against true embedding",
            expected: w_true.len(),
            found: w.len(),
        });
    }
    mean_cosine(
        w.outer_iter()
            .zip(w_true.outer_iter())
            .map(|(a, b)| (a.to_vec(), b.to_vec())),
    )
}

/// Mean cosine against the chain steps `y[i+1] - y[i]` over the `N - 3`
/// chain-interior points.
pub fn accuracy_approximate(
    w: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    n_s: usize,
) -> Result<Accuracy> {
    if w.dim() != y.dim() || y.nrows() != 3 * n_s || n_s < 2 {
        return Err(DsneError::usage(format!(
            "accuracy needs W and Y of shape (3*N_s, d); got W {:?}, Y {:?}, N_s={n_s}",
            w.dim(),
            y.dim()
        )));
    }
    let pairs = (0..3).flat_map(move |c| {
        (0..n_s - 1).map(move |i| {
            let r = c * n_s + i;
            let step = (&y.row(r + 1) - &y.row(r)).to_vec();
            (w.row(r).to_vec(), step)
        })
    });
    mean_cosine(pairs)
}

/// One (N, D) cell of the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchCell {
    pub n: usize,
    pub dim: usize,
}

impl BenchCell {
    /// Parses `150x30`.
    pub fn parse(s: &str) -> Result<Self> {
        let (n, d) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| DsneError::usage(format!("cell '{s}' is not of the form NxD")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| DsneError::usage(format!("cell '{s}' is not of the form NxD")))
        };
        let cell = BenchCell {
            n: parse(n)?,
            dim: parse(d)?,
        };
        if cell.n % 3 != 0 || cell.n < 6 {
            return Err(DsneError::usage(format!(
                "cell N={} must be a multiple of 3 and at least 6",
                cell.n
            )));
        }
        Ok(cell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub map_dim: usize,
    /// Per-method overrides keyed by registered name.
    pub params: BTreeMap<String, MethodParams>,
}

impl Default for BenchSettings {
    /// DSNE and its approximation at K = 16, perplexity 6; scVelo at K = 100.
    fn default() -> Self {
        let dsne = MethodParams {
            k: Some(16),
            perplexity: Some(6.0),
            ..Default::default()
        };
        let mut params = BTreeMap::new();
        params.insert("dsne".to_string(), dsne.clone());
        params.insert("dsne-approx".to_string(), dsne);
        params.insert(
            "scvelo".to_string(),
            MethodParams {
                k: Some(100),
                ..Default::default()
            },
        );
        BenchSettings { map_dim: 2, params }
    }
}

/// One (cell, method, seed) run; serialized as one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub method: String,
    pub n: usize,
    pub dim: usize,
    pub map_dim: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    pub n: usize,
    pub dim: usize,
    pub accuracy_mean: f64,
    /// Population standard deviation over seeds.
    pub accuracy_std: f64,
    pub per_seed: Vec<f64>,
    /// Summed over seeds.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub runs: Vec<BenchRun>,
    pub results: Vec<BenchResult>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn method_params(settings: &BenchSettings, method: &str, n: usize, seed: u64) -> MethodParams {
    let mut p = settings.params.get(method).cloned().unwrap_or_default();
    if let Some(k) = p.k {
        p.k = Some(k.min(n - 1));
    }
    p.seed = Some(seed);
    p
}

/// Runs every method on planted instances for each cell and seed.
pub fn run_bench(
    cells: &[BenchCell],
    methods: &[String],
    seeds: &[u64],
    settings: &BenchSettings,
    registry: &MethodRegistry,
) -> Result<BenchOutcome> {
    if cells.is_empty() {
        return Err(DsneError::usage("benchmark grid is empty"));
    }
    if methods.is_empty() || seeds.is_empty() {
        return Err(DsneError::usage("benchmark needs at least one method and one seed"));
    }
    let methods: Vec<&'static str> = methods
        .iter()
        .map(|m| registry.resolve(m))
        .collect::<Result<_>>()?;

    let jobs: Vec<(BenchCell, u64)> = cells
        .iter()
        .flat_map(|c| seeds.iter().map(move |s| (*c, *s)))
        .collect();
    let per_job: Vec<Vec<BenchRun>> = jobs
        .par_iter()
        .map(|&(cell, seed)| -> Result<Vec<BenchRun>> {
            let spec = SimSpec::exact_embedding(cell.n / 3, cell.dim, settings.map_dim, seed);
            let sim = simulate_planted_embedding(&spec)?;
            let input = EmbedInput {
                x: sim.x.view(),
                v: sim.v.view(),
                y: sim.y.view(),
            };
            methods
                .iter()
                .map(|&m| {
                    let embedder = registry.create(m, &method_params(settings, m, cell.n, seed))?;
                    let start = Instant::now();
                    let out = embedder.embed(&input)?;
                    let wall = start.elapsed().as_secs_f64();
                    let acc = accuracy_exact(out.w.view(), sim.w_true.view())?;
                    Ok(BenchRun {
                        method: m.to_string(),
                        n: cell.n,
                        dim: cell.dim,
                        map_dim: settings.map_dim,
                        seed,
                        accuracy: acc.value,
                        wall_time_s: wall,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let runs: Vec<BenchRun> = per_job.into_iter().flatten().collect();

    let mut results = Vec::new();
    for cell in cells {
        for &m in &methods {
            let mine: Vec<&BenchRun> = runs
                .iter()
                .filter(|r| r.method == m && r.n == cell.n && r.dim == cell.dim)
                .collect();
            let per_seed: Vec<f64> = mine.iter().map(|r| r.accuracy).collect();
            let (mean, std) = mean_std(&per_seed);
            results.push(BenchResult {
                method: m.to_string(),
                n: cell.n,
                dim: cell.dim,
                accuracy_mean: mean,
                accuracy_std: std,
                per_seed,
                wall_time_s: mine.iter().map(|r| r.wall_time_s).sum(),
            });
        }
    }
    Ok(BenchOutcome { runs, results })
}

pub const CSV_HEADER: &str = "method,N,D,d,seed,accuracy,wall_time_s";

pub fn runs_to_csv(runs: &[BenchRun]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.n, r.dim, r.map_dim, r.seed, r.accuracy, r.wall_time_s
        );
    }
    out
}

/// One row per cell, one `mean (std)` column per method.
pub fn render_table(results: &[BenchResult]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for r in results {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !cells.contains(&(r.n, r.dim)) {
            cells.push((r.n, r.dim));
        }
    }
    let mut header = vec!["Name".to_string()];
    header.extend(methods.iter().map(|m| format!("Accuracy mean (std) of {m}")));
    let mut rows = vec![header];
    for &(n, dim) in &cells {
        let mut row = vec![format!("N={n}, D={dim}")];
        for m in &methods {
            let cell = results
                .iter()
                .find(|r| r.n == n && r.dim == dim && r.method == *m)
                .map(|r| format!("{:.3} ({:.3})", r.accuracy_mean, r.accuracy_std))
                .unwrap_or_else(|| "-".to_string());
            row.push(cell);
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
