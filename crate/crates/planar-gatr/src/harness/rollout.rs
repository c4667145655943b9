use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use planar_gatr_core::model::{sample_action, Model, SampleMode, TokenBatch};
use planar_gatr_core::scene::{dynamics_step, ActionVocab, AgentState, Scene};
use planar_gatr_core::{Pose2, Real};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    /// Observed steps kept from the input scene; simulation starts at this step.
    pub history: usize,
    /// Simulated steps.
    pub horizon: usize,
    /// Most recent steps shown to the model.
    pub context: usize,
    pub mode: SampleMode,
}

/// One simulated future of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub seed: u64,
    pub greedy: bool,
    /// First simulated step.
    pub start: usize,
    /// Indices into `scene.agents` of the simulated agents: those observed at `start - 1`.
    pub active: Vec<usize>,
    /// Chosen action per active agent and simulated step.
    pub tokens: Vec<Vec<usize>>,
    /// Observed history followed by the simulated states.
    pub scene: Scene,
}

impl Rollout {
    /// Positions of the active agents over the simulated steps.
    pub fn future_positions(&self) -> Vec<Vec<[f64; 2]>> {
        self.active
            .iter()
            .map(|&a| self.scene.agents[a].states.iter().filter(|s| s.t >= self.start).map(|s| [s.pose.x, s.pose.y]).collect())
            .collect()
    }

    pub fn future_poses(&self) -> Vec<Vec<Pose2>> {
        self.active.iter().map(|&a| self.scene.agents[a].states.iter().filter(|s| s.t >= self.start).map(|s| s.pose).collect()).collect()
    }
}

/// Truncates a scene to its first `history` steps and makes room for `horizon` more.
fn observed(scene: &Scene, history: usize, horizon: usize) -> Scene {
    let mut s = scene.clone();
    for a in s.agents.iter_mut() {
        a.states.retain(|st| st.t < history);
    }
    s.horizon = history + horizon;
    s
}

/// Simulates `n` closed-loop futures. Every step runs the model on the last
/// `context` steps, picks one action per active agent from its logits at the
/// newest step, and advances all agents together through the dynamics.
///
/// Rollout `i` draws from its own stream derived from `seed`, so results do
/// not depend on how rollouts are scheduled.
pub fn rollout<T: Real>(
    model: &Model<T>,
    scene: &Scene,
    vocab: &ActionVocab,
    cfg: &RolloutConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Rollout>, HarnessError> {
    if cfg.horizon == 0 || cfg.history == 0 || cfg.context == 0 {
        return Err(HarnessError::Invalid("history, horizon and context must be positive".into()));
    }
    let base = observed(scene, cfg.history, cfg.horizon);
    let active: Vec<usize> = (0..base.agents.len()).filter(|&a| base.agents[a].state_at(cfg.history - 1).is_some()).collect();
    if active.is_empty() {
        return Err(HarnessError::Invalid(format!("no agent is observed at step {}", cfg.history - 1)));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let raw_pose = model.cfg.raw_pose_scalars;
    let greedy = matches!(cfg.mode, SampleMode::Greedy);

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rseed = seeds.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(rseed);
        let mut sim = base.clone();
        let mut tokens = vec![Vec::with_capacity(cfg.horizon); active.len()];
        for t in cfg.history - 1..cfg.history - 1 + cfg.horizon {
            let start = (t + 1).saturating_sub(cfg.context);
            let steps = t + 1 - start;
            let batch = TokenBatch::from_scene(&sim, vocab, start, steps, raw_pose)?;
            let logits = model.logits(&batch)?;
            let mut next = Vec::with_capacity(active.len());
            for (k, &a) in active.iter().enumerate() {
                let agent = &sim.agents[a];
                let tok = sample_action(&logits[a * steps + steps - 1], cfg.mode, &mut rng);
                let cur = agent.state_at(t).expect("active agents have every simulated state").pose;
                let (pose, speed) = dynamics_step(&cur, &vocab.detokenize(tok, agent.class)?, sim.dt)?;
                tokens[k].push(tok);
                next.push(AgentState { t: t + 1, pose, speed });
            }
            for (&a, st) in active.iter().zip(next) {
                sim.agents[a].states.push(st);
            }
        }
        out.push(Rollout { seed: rseed, greedy, start: cfg.history, active: active.clone(), tokens, scene: sim });
    }
    Ok(out)
}
