use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsne::io::{self, MatrixName, RunManifest};
use dsne::optimizer::SolverConfig;
use dsne::plot::{self, PlotStyle};
use dsne::simulation::{self, BenchCell, BenchSettings, SimMode, SimSpec};
use dsne::{gradcheck, DsneError, EmbedInput, MethodParams, MethodRegistry, Result};

/// Velocity embedding on fixed low-dimensional maps.
#[derive(Debug, Parser)]
#[command(name = "dsne", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed velocities V of points X onto map points Y.
    Embed(EmbedArgs),
    /// Generate synthetic chain data.
    Simulate(SimulateArgs),
    /// Accuracy of methods on planted instances.
    Bench(BenchArgs),
    /// Draw W over Y as an SVG arrow or grid plot.
    Plot(PlotArgs),
    /// Compare analytic derivatives with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SolverFlags {
    /// Neighbors per point.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    momentum_early: Option<f64>,
    #[arg(long)]
    momentum_late: Option<f64>,
    /// Iteration at which the late momentum takes over.
    #[arg(long)]
    momentum_switch: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverFlags {
    fn solver(&self, seed: u64) -> SolverConfig {
        let mut c = SolverConfig::default();
        c.seed = seed;
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.perplexity {
            c.perplexity = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.momentum_early {
            c.momentum_early = v;
        }
        if let Some(v) = self.momentum_late {
            c.momentum_late = v;
        }
        if let Some(v) = self.momentum_switch {
            c.momentum_switch_iter = v;
        }
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        c
    }
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// High-dimensional points.
    #[arg(long)]
    x: PathBuf,
    /// High-dimensional velocities.
    #[arg(long)]
    v: PathBuf,
    /// Map points.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value = "dsne")]
    method: String,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output W file; the manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    ExactVelocity,
    ExactEmbedding,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "exact-embedding")]
    mode: ModeArg,
    /// Points per chain.
    #[arg(long)]
    n_s: usize,
    /// High dimension.
    #[arg(long = "dim")]
    dim: usize,
    /// Map dimension.
    #[arg(long = "map-dim", default_value_t = 2)]
    map_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated NxD cells, e.g. 150x30,1500x10.
    #[arg(long)]
    cells: String,
    #[arg(long, default_value = "dsne,scvelo")]
    methods: String,
    /// Number of seeds, run as 0..seeds.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long = "map-dim", default_value_t = 2)]
    map_dim: usize,
    /// Neighbors for the DSNE variants.
    #[arg(long)]
    k: Option<usize>,
    /// Perplexity for the DSNE variants.
    #[arg(long)]
    perplexity: Option<f64>,
    /// Per-run CSV; the table is printed to stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StyleArg {
    Arrow,
    Grid,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    w: PathBuf,
    #[arg(long, value_enum, default_value = "arrow")]
    style: StyleArg,
    #[arg(long, default_value_t = 20)]
    grid_nx: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn args_vec() -> Vec<String> {
    std::env::args().collect()
}

fn embed(a: EmbedArgs) -> Result<()> {
    let start = Instant::now();
    let x = io::read_matrix(&a.x)?.data;
    let v = io::read_matrix(&a.v)?.data;
    let y = io::read_matrix(&a.y)?.data;
    let params = MethodParams {
        k: a.solver.k,
        perplexity: a.solver.perplexity,
        seed: Some(a.seed),
        solver: Some(a.solver.solver(a.seed)),
    };
    let embedder = MethodRegistry::default().create(&a.method, &params)?;
    let out = embedder.embed(&EmbedInput {
        x: x.view(),
        v: v.view(),
        y: y.view(),
    })?;
    io::write_matrix(&a.out, MatrixName::W, out.w.view())?;

    let mut config = embedder.config();
    config["method"] = embedder.name().into();
    let mut m = RunManifest::new("embed", args_vec(), config, Some(a.seed));
    for p in [&a.x, &a.v, &a.y] {
        m.add_input(p)?;
    }
    m.add_output(&a.out);
    if let Some(r) = out.report {
        eprintln!(
            "{}: {} iterations, converged={}, loss {} -> {}",
            embedder.name(),
            r.iterations,
            r.converged,
            r.loss_initial,
            r.loss_final
        );
    }
    if !out.flagged.is_empty() {
        eprintln!("{} points had cancelling directions and were set to zero", out.flagged.len());
    }
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(manifest_path(&a.out))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let spec = match a.mode {
        ModeArg::ExactVelocity => SimSpec::exact_velocity(a.n_s, a.dim, a.seed),
        ModeArg::ExactEmbedding => SimSpec::exact_embedding(a.n_s, a.dim, a.map_dim, a.seed),
    };
    spec.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| DsneError::Io {
        path: a.out.display().to_string(),
        source: e,
    })?;
    let mut m = RunManifest::new("simulate", args_vec(), serde_json::json!(spec), Some(a.seed));
    let files = match spec.mode {
        SimMode::ExactVelocity => {
            let (x, v) = simulation::simulate_chains_highdim(&spec)?;
            vec![("X.csv", MatrixName::X, x), ("V.csv", MatrixName::V, v)]
        }
        SimMode::ExactEmbedding => {
            let sim = simulation::simulate_planted_embedding(&spec)?;
            vec![
                ("X.csv", MatrixName::X, sim.x),
                ("V.csv", MatrixName::V, sim.v),
                ("Y.csv", MatrixName::Y, sim.y),
                ("W_true.csv", MatrixName::W, sim.w_true),
            ]
        }
    };
    for (file, name, data) in &files {
        let p = a.out.join(file);
        io::write_matrix(&p, *name, data.view())?;
        m.add_output(&p);
    }
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(a.out.join("manifest.json"))
}

fn bench(a: BenchArgs) -> Result<()> {
    let start = Instant::now();
    let cells = a
        .cells
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(BenchCell::parse)
        .collect::<Result<Vec<_>>>()?;
    let methods: Vec<String> = a
        .methods
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut settings = BenchSettings {
        map_dim: a.map_dim,
        ..BenchSettings::default()
    };
    for name in ["dsne", "dsne-approx"] {
        let p = settings.params.entry(name.to_string()).or_default();
        if a.k.is_some() {
            p.k = a.k;
        }
        if a.perplexity.is_some() {
            p.perplexity = a.perplexity;
        }
    }
    let registry = MethodRegistry::default();
    let outcome = simulation::run_bench(&cells, &methods, &seeds, &settings, &registry)?;
    std::fs::write(&a.out, simulation::runs_to_csv(&outcome.runs)).map_err(|e| DsneError::Io {
        path: a.out.display().to_string(),
        source: e,
    })?;
    print!("{}", simulation::render_table(&outcome.results));

    let config = serde_json::json!({
        "cells": cells,
        "methods": methods,
        "seeds": seeds,
        "settings": settings,
        "results": outcome.results,
    });
    let mut m = RunManifest::new("bench", args_vec(), config, None);
    m.add_output(&a.out);
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(manifest_path(&a.out))
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    let start = Instant::now();
    let y = io::read_matrix(&a.y)?.data;
    let w = io::read_matrix(&a.w)?.data;
    let style = match a.style {
        StyleArg::Arrow => PlotStyle::Arrow,
        StyleArg::Grid => PlotStyle::Grid,
    };
    let svg = plot::plot_svg(y.view(), w.view(), style, a.grid_nx)?;
    std::fs::write(&a.out, svg).map_err(|e| DsneError::Io {
        path: a.out.display().to_string(),
        source: e,
    })?;
    let config = serde_json::json!({ "style": style, "grid_nx": a.grid_nx });
    let mut m = RunManifest::new("plot", args_vec(), config, None);
    m.add_input(&a.y)?;
    m.add_input(&a.w)?;
    m.add_output(&a.out);
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(manifest_path(&a.out))
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let r = gradcheck::run_suite(a.states, a.seed)?;
    println!("states                         {}", r.states.len());
    println!("max rel err dC/dw              {:e}", r.max_rel_err_grad_w);
    println!("max rel err dC/dbeta           {:e}", r.max_rel_err_grad_beta);
    println!("max rel err Hessian w          {:e}", r.max_rel_err_hessian_w);
    println!("min d2C/dbeta2 (analytic)      {:e}", r.min_second_derivative_beta);
    println!("min d2C/dbeta2 (second diff)   {:e}", r.min_fd_second_difference_beta);
    println!("runtime s                      {:.3}", r.runtime_s);
    if let Some(out) = a.out {
        let json = serde_json::to_string_pretty(&r).expect("report serializes");
        std::fs::write(&out, json + "\n").map_err(|e| DsneError::Io {
            path: out.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    dsne::init_thread_pool();
    let result = match cli.command {
        Command::Embed(a) => embed(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
