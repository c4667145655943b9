//! Run configuration shared by every subcommand, loaded from JSON and then
//! overridden by command-line flags.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use planar_gatr_core::model::{MapAttention, ModelConfig, TrainConfig};
use planar_gatr_core::scene::{SceneGenConfig, DEFAULT_HEADING_WEIGHT};
use planar_gatr_core::DType;

use crate::harness::SamplingMode;
use crate::io::{hex, IoError, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DTypeDto {
    F32,
    #[default]
    F64,
}

impl From<DTypeDto> for DType {
    fn from(d: DTypeDto) -> Self {
        match d {
            DTypeDto::F32 => DType::F32,
            DTypeDto::F64 => DType::F64,
        }
    }
}

impl From<DType> for DTypeDto {
    fn from(d: DType) -> Self {
        match d {
            DType::F32 => DTypeDto::F32,
            DType::F64 => DTypeDto::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapAttentionDto {
    All,
    Knn(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mv_channels: usize,
    pub scalar_channels: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Vehicle, pedestrian, cyclist. Replaced by the vocabulary's sizes when one is loaded.
    pub vocab_sizes: [usize; 3],
    pub map_attention: MapAttentionDto,
    pub distance_awareness: bool,
    pub raw_pose_scalars: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from_config(&ModelConfig::default())
    }
}

impl ModelSection {
    pub fn from_config(c: &ModelConfig) -> Self {
        ModelSection {
            mv_channels: c.mv_channels,
            scalar_channels: c.scalar_channels,
            heads: c.heads,
            blocks: c.blocks,
            vocab_sizes: c.vocab_sizes,
            map_attention: match c.map_attention {
                MapAttention::All => MapAttentionDto::All,
                MapAttention::Knn(k) => MapAttentionDto::Knn(k),
            },
            distance_awareness: c.distance_awareness,
            raw_pose_scalars: c.raw_pose_scalars,
        }
    }

    pub fn to_config(&self, dtype: DType, seed: u64) -> ModelConfig {
        ModelConfig {
            mv_channels: self.mv_channels,
            scalar_channels: self.scalar_channels,
            heads: self.heads,
            blocks: self.blocks,
            vocab_sizes: self.vocab_sizes,
            map_attention: match self.map_attention {
                MapAttentionDto::All => MapAttention::All,
                MapAttentionDto::Knn(k) => MapAttention::Knn(k),
            },
            distance_awareness: self.distance_awareness,
            dtype,
            seed,
            raw_pose_scalars: self.raw_pose_scalars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub agents: usize,
    pub lanes: usize,
    pub nodes_per_lane: usize,
    pub node_length: f64,
    pub horizon: usize,
    pub dt: f64,
    pub noise: f64,
    pub heading_noise: f64,
    pub max_curvature: f64,
}

impl Default for GenSection {
    fn default() -> Self {
        let c = SceneGenConfig::default();
        GenSection {
            agents: c.agents,
            lanes: c.lanes,
            nodes_per_lane: c.nodes_per_lane,
            node_length: c.node_length,
            horizon: c.horizon,
            dt: c.dt,
            noise: c.noise,
            heading_noise: c.heading_noise,
            max_curvature: c.max_curvature,
        }
    }
}

impl GenSection {
    pub fn to_config(&self) -> SceneGenConfig {
        SceneGenConfig {
            agents: self.agents,
            lanes: self.lanes,
            nodes_per_lane: self.nodes_per_lane,
            node_length: self.node_length,
            horizon: self.horizon,
            dt: self.dt,
            noise: self.noise,
            heading_noise: self.heading_noise,
            max_curvature: self.max_curvature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub cap: usize,
    pub w_theta: f64,
    /// Fixed per-class radii; when absent each class gets the smallest radius
    /// whose selection fits the cap.
    pub k_r: Option<[f64; 3]>,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { cap: 64, w_theta: DEFAULT_HEADING_WEIGHT, k_r: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Record one loss row every this many steps.
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection { steps: c.steps, batch_size: c.batch_size, lr: c.lr, log_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    /// Observed steps before the simulation starts.
    pub history: usize,
    pub horizon: usize,
    pub mode: SamplingMode,
    pub temperature: f64,
    pub n: usize,
    /// Most recent steps fed to the model at every step.
    pub context: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection { history: 8, horizon: 8, mode: SamplingMode::Sample, temperature: 1.0, n: 8, context: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub trials: usize,
    pub scenes: usize,
    pub rollout_horizon: usize,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection { trials: 20, scenes: 4, rollout_horizon: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub agents: Vec<usize>,
    pub map_nodes: usize,
    pub steps: usize,
    pub reps: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { agents: vec![8, 16, 32, 64], map_nodes: 12, steps: 16, reps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dtype: DTypeDto,
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
    pub model: ModelSection,
    pub gen: GenSection,
    pub vocab: VocabSection,
    pub train: TrainSection,
    pub rollout: RolloutSection,
    pub check: CheckSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, IoError> {
        serde_json::from_slice(bytes).map_err(|e| IoError::Parse { what: "config", msg: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serialization cannot fail")))
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.to_config(self.dtype.into(), self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.hash(), self.seed)
    }
}
