//! Context-adaptation meta-training.
//!
//! Each task adapts only the context vector φ, starting from zero, with
//! policy-gradient steps on its own trajectories. The network weights θ are
//! trained across tasks by differentiating the post-adaptation loss through
//! that inner step.

mod adapt;
mod advantage;
mod train;
mod trajectory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::envs::EnvError;
use crate::layers::LayerError;

pub use adapt::{inner_adapt, inner_loss, mean_gradient, outer_update, Adam};
pub use advantage::{
    compute_gae, discounted_returns, fit_baseline, normalize, AdvantageSet, BaselineParams,
};
pub use train::{
    add_exploration_credit, meta_test, meta_test_tasks, meta_train, task_meta_gradient,
    IterationLog, MetaTestResult, TaskLog, TaskOutcome, TrainOutcome,
};
pub use trajectory::{collect_trajectories, mean_return, StepBatch, Trajectory};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Meta-training and meta-testing hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub n_iterations: usize,
    /// Tasks per outer update (N).
    pub meta_batch_size: usize,
    /// Episodes per task for each of the pre- and post-adaptation batches
    /// during meta-training.
    pub n_traj_train: usize,
    /// Episodes per task and per adaptation step during meta-testing.
    pub n_traj_test: usize,
    /// Inner (context) step size α.
    pub inner_lr: f64,
    /// Outer (network) step size β.
    pub outer_lr: f64,
    pub n_inner_steps_train: usize,
    pub n_inner_steps_test: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Drop second-order terms from the meta-gradient.
    pub first_order: bool,
    /// Weight of the pre-adaptation sampling credit (see
    /// [`add_exploration_credit`]). Zero gives the plain meta-gradient.
    pub exploration_weight: f64,
    /// Tasks sampled for each meta-test evaluation.
    pub n_test_tasks: usize,
    /// Rollout threads. Results do not depend on this value, so it is an
    /// execution setting rather than part of a saved configuration.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            n_iterations: 500,
            meta_batch_size: 20,
            n_traj_train: 20,
            n_traj_test: 20,
            inner_lr: 0.5,
            outer_lr: 7e-4,
            n_inner_steps_train: 1,
            n_inner_steps_test: 4,
            gamma: 0.95,
            gae_lambda: 1.0,
            first_order: false,
            exploration_weight: 0.0,
            n_test_tasks: 40,
            workers: 1,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: &str| Err(MetaError::Contract(m.to_string()));
        if self.meta_batch_size == 0 {
            return bad("meta_batch_size must be positive");
        }
        if self.n_traj_train == 0 || self.n_traj_test == 0 {
            return bad("trajectory counts must be positive");
        }
        if self.n_inner_steps_train == 0 {
            return bad("n_inner_steps_train must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.inner_lr.is_finite() && self.inner_lr >= 0.0) {
            return bad("inner_lr must be finite and non-negative");
        }
        if !(self.outer_lr.is_finite() && self.outer_lr >= 0.0) {
            return bad("outer_lr must be finite and non-negative");
        }
        if !(self.exploration_weight.is_finite() && self.exploration_weight >= 0.0) {
            return bad("exploration_weight must be finite and non-negative");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        Ok(())
    }
}
