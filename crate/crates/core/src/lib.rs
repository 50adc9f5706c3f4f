//! Velocity embedding for fixed low-dimensional maps.
//!
//! Given high-dimensional points `X`, their velocities `V` and precomputed
//! map coordinates `Y`, the crate finds per-point map velocities `W` whose
//! directional neighbor similarities match those of `V` in the original
//! space. Three interchangeable methods are available through
//! [`registry::MethodRegistry`]: the iterative `dsne` solver, its
//! closed-form `dsne-approx` variant and the `scvelo` projection.

pub mod baselines;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod highdim;
pub mod io;
pub mod knn;
pub mod optimizer;
pub mod plot;
pub mod registry;
pub mod simulation;

pub use error::{DsneError, Result};
pub use registry::{EmbedInput, Embedding, MethodParams, MethodRegistry, VelocityEmbedder};

/// Caps the global rayon pool at `DSNE_THREADS` when that variable is set.
///
/// Safe to call more than once; only the first successful call has effect.
pub fn init_thread_pool() {
    if let Some(n) = std::env::var("DSNE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
