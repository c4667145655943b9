//! Closed-loop rollouts, equivariance audits, displacement metrics,
//! scaling benchmarks and multi-threaded training.

mod audit;
mod bench;
mod metrics;
mod parallel;
mod rollout;

pub use audit::{equivariance_audit, fixed_transform, layer_audits, random_transform, AuditEntry, AuditOptions, AuditReport};
pub use bench::{bench_csv, bench_scaling, BenchOptions, BenchRow};
pub use metrics::{constant_velocity, min_ade, truth_positions};
pub use parallel::{par_map, parallel_loss_and_grads, train_parallel};
pub use rollout::{rollout, Rollout, RolloutConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use planar_gatr_core::model::{ModelError, SampleMode};
use planar_gatr_core::scene::SceneError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0}")]
    Invalid(String),
}

/// How rollouts pick an action from the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Greedy,
    Sample,
}

impl SamplingMode {
    pub fn to_core(self, temperature: f64) -> SampleMode {
        match self {
            SamplingMode::Greedy => SampleMode::Greedy,
            SamplingMode::Sample => SampleMode::Categorical { temperature },
        }
    }
}
