use alloc::vec::Vec;

use super::{Scene, SceneError};
use crate::pga::{wrap_angle, Motor, Pose2};
#[allow(unused_imports)]
use num_traits::Float;

/// A rigid displacement expressed in the moving agent's frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Delta {
    pub const ZERO: Delta = Delta { dx: 0.0, dy: 0.0, dtheta: 0.0 };

    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Delta { dx, dy, dtheta }
    }

    pub fn as_pose(&self) -> Pose2 {
        Pose2 { x: self.dx, y: self.dy, theta: self.dtheta }
    }
}

/// The local displacement that takes `from` to `to`.
pub fn local_delta(from: &Pose2, to: &Pose2) -> Delta {
    let r = from.relative(to);
    Delta { dx: r.x, dy: r.y, dtheta: wrap_angle(r.theta) }
}

/// Advances one step: `pose ∘ delta`, with speed `|(dx, dy)| / dt`.
pub fn dynamics_step(pose: &Pose2, delta: &Delta, dt: f64) -> Result<(Pose2, f64), SceneError> {
    if !(dt > 0.0) {
        return Err(SceneError::BadDt(dt));
    }
    Ok((pose.compose(&delta.as_pose()), delta.dx.hypot(delta.dy) / dt))
}

/// Re-expresses every pose relative to the ego's pose at step 0. The returned
/// motor maps recentered coordinates back to the original ones.
pub fn recenter_scene(s: &Scene) -> Result<(Scene, Motor), SceneError> {
    let ego = s.ego().ok_or(SceneError::MissingEgo(s.ego_id))?;
    let origin = ego.state_at(0).ok_or(SceneError::MissingState { agent: ego.id, t: 0 })?.pose;
    let inv = origin.inverse();
    let mut out = s.clone();
    for a in out.agents.iter_mut() {
        for st in a.states.iter_mut() {
            st.pose = inv.compose(&st.pose);
        }
    }
    for m in out.map.iter_mut() {
        m.pose = inv.compose(&m.pose);
    }
    Ok((out, Motor::from_pose(&origin)))
}

/// Applies a global rigid motion to every pose of a scene.
pub fn transform_scene(s: &Scene, g: &Pose2) -> Scene {
    let mut out = s.clone();
    for a in out.agents.iter_mut() {
        for st in a.states.iter_mut() {
            st.pose = g.compose(&st.pose);
        }
    }
    for m in out.map.iter_mut() {
        m.pose = g.compose(&m.pose);
    }
    out
}

/// All consecutive-step local deltas of an agent's trajectory.
pub fn agent_deltas(states: &[super::AgentState]) -> Vec<Delta> {
    states.windows(2).filter(|w| w[1].t == w[0].t + 1).map(|w| local_delta(&w[0].pose, &w[1].pose)).collect()
}
