use alloc::vec;
use alloc::vec::Vec;

use crate::pga::Pose2;
use crate::scene::{agent_raw_features, local_delta, map_raw_features, ActionVocab, AgentClass, Scene, SceneError, AGENT_FEATURES};
#[allow(unused_imports)]
use num_traits::Float;

/// Extra per-token inputs of the non-equivariant control: global `(x, y, cos θ, sin θ)`.
pub const RAW_POSE_FEATURES: usize = 4;

/// Model inputs for one scene over a window of steps, agent-major:
/// token `a * steps + t` is agent `a` at window step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub agents: usize,
    pub steps: usize,
    /// First scene step covered by the window.
    pub start: usize,
    pub classes: Vec<AgentClass>,
    pub poses: Vec<Pose2>,
    pub valid: Vec<bool>,
    pub feature_width: usize,
    /// `[agents * steps, feature_width]`
    pub agent_features: Vec<f64>,
    pub map_poses: Vec<Pose2>,
    /// `[map, MAP_FEATURES]`
    pub map_features: Vec<f64>,
    /// Action taken into each state; `None` marks the start token.
    pub prev_tokens: Vec<Option<usize>>,
    /// Action taken out of each state, where the next state is known.
    pub targets: Vec<Option<usize>>,
}

impl TokenBatch {
    /// Tokens for scene steps `start..start + steps`.
    pub fn from_scene(scene: &Scene, vocab: &ActionVocab, start: usize, steps: usize, raw_pose: bool) -> Result<Self, SceneError> {
        let a_n = scene.agents.len();
        let feature_width = AGENT_FEATURES + if raw_pose { RAW_POSE_FEATURES } else { 0 };
        let n = a_n * steps;
        let mut b = TokenBatch {
            agents: a_n,
            steps,
            start,
            classes: scene.agents.iter().map(|a| a.class).collect(),
            poses: vec![Pose2::IDENTITY; n],
            valid: vec![false; n],
            feature_width,
            agent_features: vec![0.0; n * feature_width],
            map_poses: scene.map.iter().map(|m| m.pose).collect(),
            map_features: scene.map.iter().flat_map(|m| map_raw_features(m)).collect(),
            prev_tokens: vec![None; n],
            targets: vec![None; n],
        };
        for (ai, agent) in scene.agents.iter().enumerate() {
            for w in 0..steps {
                let t = start + w;
                let Some(st) = agent.state_at(t) else { continue };
                let i = ai * steps + w;
                b.poses[i] = st.pose;
                b.valid[i] = true;
                let f = &mut b.agent_features[i * feature_width..(i + 1) * feature_width];
                f[..AGENT_FEATURES].copy_from_slice(&agent_raw_features(agent, t)?);
                if raw_pose {
                    let (s, c) = st.pose.theta.sin_cos();
                    f[AGENT_FEATURES..].copy_from_slice(&[st.pose.x, st.pose.y, c, s]);
                }
                if t > 0 {
                    if let Some(prev) = agent.state_at(t - 1) {
                        b.prev_tokens[i] = Some(vocab.tokenize(&local_delta(&prev.pose, &st.pose), agent.class)?);
                    }
                }
                if w + 1 < steps {
                    if let Some(next) = agent.state_at(t + 1) {
                        b.targets[i] = Some(vocab.tokenize(&local_delta(&st.pose, &next.pose), agent.class)?);
                    }
                }
            }
        }
        Ok(b)
    }

    pub fn tokens(&self) -> usize {
        self.agents * self.steps
    }

    pub fn map_len(&self) -> usize {
        self.map_poses.len()
    }

    pub fn target_count(&self) -> usize {
        self.targets.iter().flatten().count()
    }
}
