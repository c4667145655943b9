use planar_gatr_core::scene::Scene;

use super::HarnessError;

/// Mean over agents of the smallest time-averaged displacement error.
///
/// `rollouts[r][a][k]` is agent `a`'s position at future step `k` in rollout
/// `r`; `truth[a][k]` is the observed position, `None` where unobserved.
/// Unobserved steps are left out of the time average and agents with no
/// observed future are left out of the agent average.
pub fn min_ade(rollouts: &[Vec<Vec<[f64; 2]>>], truth: &[Vec<Option<[f64; 2]>>]) -> Result<f64, HarnessError> {
    if rollouts.is_empty() {
        return Err(HarnessError::Invalid("min_ade needs at least one rollout".into()));
    }
    for (r, ro) in rollouts.iter().enumerate() {
        if ro.len() != truth.len() || ro.iter().zip(truth).any(|(p, t)| p.len() != t.len()) {
            return Err(HarnessError::Invalid(format!("rollout {r} does not match the ground-truth agents and horizon")));
        }
    }
    let mut total = 0.0;
    let mut agents = 0usize;
    for (a, gt) in truth.iter().enumerate() {
        let observed = gt.iter().flatten().count();
        if observed == 0 {
            continue;
        }
        let best = rollouts
            .iter()
            .map(|ro| {
                let sum: f64 = ro[a].iter().zip(gt).filter_map(|(p, g)| g.map(|g| (p[0] - g[0]).hypot(p[1] - g[1]))).sum();
                sum / observed as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += best;
        agents += 1;
    }
    if agents == 0 {
        return Err(HarnessError::Invalid("no agent has an observed future".into()));
    }
    Ok(total / agents as f64)
}

/// Observed positions of `agents` (indices into `scene.agents`) over steps `start..start + horizon`.
pub fn truth_positions(scene: &Scene, agents: &[usize], start: usize, horizon: usize) -> Vec<Vec<Option<[f64; 2]>>> {
    agents.iter().map(|&a| (start..start + horizon).map(|t| scene.agents[a].state_at(t).map(|s| [s.pose.x, s.pose.y])).collect()).collect()
}

/// Constant-velocity extrapolation from the last two observed positions
/// (stationary when only one is observed). Positions per agent over
/// `start..start + horizon`.
pub fn constant_velocity(scene: &Scene, agents: &[usize], start: usize, horizon: usize) -> Result<Vec<Vec<[f64; 2]>>, HarnessError> {
    agents
        .iter()
        .map(|&a| {
            let ag = &scene.agents[a];
            let last = start
                .checked_sub(1)
                .and_then(|t| ag.state_at(t))
                .ok_or_else(|| HarnessError::Invalid(format!("agent {} not observed at step {}", ag.id, start.saturating_sub(1))))?
                .pose;
            let v = match start.checked_sub(2).and_then(|t| ag.state_at(t)) {
                Some(prev) => [last.x - prev.pose.x, last.y - prev.pose.y],
                None => [0.0, 0.0],
            };
            Ok((1..=horizon).map(|k| [last.x + k as f64 * v[0], last.y + k as f64 * v[1]]).collect())
        })
        .collect()
}
