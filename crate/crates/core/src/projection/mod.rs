//! 2-D projection of recent steps with exact t-SNE.

pub mod affinity;
pub mod features;
pub mod tsne;

pub use affinity::{calibrate_affinities, squared_distances, Affinities};
pub use features::{featurize, pool_observation, subsample, subsample_refs, FeatureMatrix, StepRef};
pub use tsne::{kl_divergence, kl_gradient};

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("{0}")]
    Domain(String),
    #[error("non-finite gradient at iteration {iteration}, point {index}")]
    NonFinite { iteration: usize, index: usize },
    #[error("projection cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

/// Shared cancellation flag and progress in `[0, 1]`.
#[derive(Debug, Default)]
pub struct JobControl {
    cancelled: AtomicBool,
    progress: AtomicU64,
}

impl JobControl {
    pub fn new() -> JobControl {
        JobControl::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Relaxed)
    }

    pub fn progress(&self) -> f64 {
        f64::from_bits(self.progress.load(Ordering::Relaxed))
    }

    pub fn set_progress(&self, p: f64) {
        self.progress.store(p.clamp(0.0, 1.0).to_bits(), Ordering::Relaxed);
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    pub refs: Vec<StepRef>,
    /// Final `KL(P || Q)`; zero for the fixed small-N layouts.
    pub kl: f64,
    pub kl_after_exaggeration: Option<f64>,
}

/// Fixed layouts for fewer than four points: origin, a unit segment, a unit
/// equilateral triangle, all centred on the origin.
fn degenerate_layout(n: usize) -> Vec<[f64; 2]> {
    let h = 3f64.sqrt() / 2.0;
    match n {
        1 => vec![[0.0, 0.0]],
        2 => vec![[-0.5, 0.0], [0.5, 0.0]],
        _ => vec![[-0.5, -h / 3.0], [0.5, -h / 3.0], [0.0, 2.0 * h / 3.0]],
    }
}

/// Embeds the feature rows into two dimensions.
pub fn project(x: &FeatureMatrix, params: &ProjectionParams) -> Result<Projection, ProjectionError> {
    project_with(x, params, &JobControl::new())
}

pub fn project_with(x: &FeatureMatrix, params: &ProjectionParams, control: &JobControl) -> Result<Projection, ProjectionError> {
    let n = x.n;
    if n == 0 {
        return Err(ProjectionError::Domain("nothing to project".into()));
    }
    if n < 4 {
        control.set_progress(1.0);
        return Ok(Projection { coords: degenerate_layout(n), refs: x.refs.clone(), kl: 0.0, kl_after_exaggeration: None });
    }
    if params.iterations == 0 || params.learning_rate.is_nan() || params.learning_rate <= 0.0 {
        return Err(ProjectionError::Domain("iterations and learning_rate must be positive".into()));
    }
    let aff = calibrate_affinities(&x.data, n, x.d, params.perplexity)?;
    control.set_progress(0.1);
    let out = tsne::optimize(&aff.p, n, params, control)?;
    Ok(Projection { coords: out.y, refs: x.refs.clone(), kl: out.kl, kl_after_exaggeration: out.kl_after_exaggeration })
}
