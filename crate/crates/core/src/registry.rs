//! Embedding methods behind one trait, looked up by name.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineConfig};
use crate::error::{DsneError, Result};
use crate::optimizer::{self, SolveReport, SolverConfig};

/// The three matrices every method consumes.
#[derive(Debug, Clone, Copy)]
pub struct EmbedInput<'a> {
    pub x: ArrayView2<'a, f64>,
    pub v: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub w: Array2<f64>,
    /// `false` for zero-velocity rows; their output is zero.
    pub active: Vec<bool>,
    pub flagged: Vec<usize>,
    pub report: Option<SolveReport>,
}

/// Overrides applied on top of each method's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub k: Option<usize>,
    pub perplexity: Option<f64>,
    pub seed: Option<u64>,
    /// Solver settings; `k`, `perplexity` and `seed` above take precedence.
    pub solver: Option<SolverConfig>,
}

pub trait VelocityEmbedder: Send + Sync {
    fn name(&self) -> &'static str;

    /// Effective configuration, recorded in run manifests.
    fn config(&self) -> serde_json::Value;

    fn embed(&self, input: &EmbedInput<'_>) -> Result<Embedding>;
}

pub struct Dsne {
    pub config: SolverConfig,
}

impl Dsne {
    pub fn from_params(params: &MethodParams) -> Self {
        let mut config = params.solver.unwrap_or_default();
        if let Some(k) = params.k {
            config.k = k;
        }
        if let Some(p) = params.perplexity {
            config.perplexity = p;
        }
        if let Some(s) = params.seed {
            config.seed = s;
        }
        Dsne { config }
    }
}

impl VelocityEmbedder for Dsne {
    fn name(&self) -> &'static str {
        "dsne"
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(self.config).expect("plain config serializes")
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<Embedding> {
        let run = optimizer::run_dsne(input.x, input.v, input.y, &self.config)?;
        Ok(Embedding {
            w: run.w,
            active: run.state.active,
            flagged: Vec::new(),
            report: Some(run.report),
        })
    }
}

pub struct Baseline {
    name: &'static str,
    pub config: BaselineConfig,
}

impl Baseline {
    fn from_params(name: &'static str, mut config: BaselineConfig, params: &MethodParams) -> Self {
        if let Some(k) = params.k {
            config.k = k;
            if config.method == baselines::BaselineMethod::Scvelo && params.perplexity.is_none() {
                config.perplexity = BaselineConfig::scvelo_with_k(k).perplexity;
            }
        }
        if let Some(p) = params.perplexity {
            config.perplexity = p;
        }
        if let Some(s) = params.seed {
            config.seed = s;
        }
        if let Some(solver) = params.solver {
            config.map_norm_stabilizer = solver.map_norm_stabilizer;
            config.data_norm_stabilizer = solver.data_norm_stabilizer;
        }
        Baseline { name, config }
    }
}

impl VelocityEmbedder for Baseline {
    fn name(&self) -> &'static str {
        self.name
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(self.config).expect("plain config serializes")
    }

    fn embed(&self, input: &EmbedInput<'_>) -> Result<Embedding> {
        let out = match self.config.method {
            baselines::BaselineMethod::Scvelo => {
                baselines::scvelo_embedding(input.x, input.v, input.y, &self.config)?
            }
            baselines::BaselineMethod::DsneApprox => {
                baselines::dsne_approximate(input.x, input.v, input.y, &self.config)?
            }
        };
        Ok(Embedding {
            w: out.w,
            active: out.active,
            flagged: out.flagged,
            report: None,
        })
    }
}

pub type Factory = fn(&MethodParams) -> Box<dyn VelocityEmbedder>;

/// Name-indexed table of embedding methods.
pub struct MethodRegistry {
    entries: BTreeMap<&'static str, Factory>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut r = MethodRegistry::empty();
        r.register("dsne", |p| Box::new(Dsne::from_params(p)));
        r.register("dsne-approx", |p| {
            Box::new(Baseline::from_params("dsne-approx", BaselineConfig::dsne_approx(), p))
        });
        r.register("scvelo", |p| {
            Box::new(Baseline::from_params("scvelo", BaselineConfig::scvelo(), p))
        });
        r
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// Canonical registered name; underscores are accepted for dashes.
    pub fn resolve(&self, name: &str) -> Result<&'static str> {
        let wanted = name.trim().to_ascii_lowercase().replace('_', "-");
        self.entries
            .keys()
            .find(|k| **k == wanted)
            .copied()
            .ok_or_else(|| {
                DsneError::usage(format!(
                    "unknown method '{name}' (available: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn create(&self, name: &str, params: &MethodParams) -> Result<Box<dyn VelocityEmbedder>> {
        let key = self.resolve(name)?;
        Ok((self.entries[key])(params))
    }
}
