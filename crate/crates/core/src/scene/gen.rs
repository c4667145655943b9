use core::f64::consts::PI;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Agent, AgentClass, AgentState, Boundary, MapNode, Scene, SceneError};
use crate::pga::{wrap_angle, Pose2};
#[allow(unused_imports)]
use num_traits::Float;

/// Parameters of the synthetic lane-following scene generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneGenConfig {
    pub agents: usize,
    pub lanes: usize,
    pub nodes_per_lane: usize,
    /// Lane discretization step for map nodes, meters.
    pub node_length: f64,
    pub horizon: usize,
    pub dt: f64,
    /// Lateral jitter bound around the centerline, meters.
    pub noise: f64,
    /// Heading jitter bound, radians.
    pub heading_noise: f64,
    pub max_curvature: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            agents: 4,
            lanes: 2,
            nodes_per_lane: 6,
            node_length: 5.0,
            horizon: 16,
            dt: 0.5,
            noise: 0.02,
            heading_noise: 0.005,
            max_curvature: 0.04,
        }
    }
}

const SEGMENTS_PER_LANE: usize = 3;
const SPEED_CAP: f64 = 14.0;

impl SceneGenConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::BadConfig(format!("{m}")));
        if self.agents == 0 {
            return bad("agents must be at least 1");
        }
        if self.lanes == 0 || self.nodes_per_lane == 0 {
            return bad("need at least one lane with one node");
        }
        if self.horizon < 2 {
            return bad("horizon must be at least 2 steps");
        }
        if !(self.dt > 0.0) || !(self.node_length > 0.0) {
            return bad("dt and node_length must be positive");
        }
        if !(self.noise >= 0.0) || !(self.heading_noise >= 0.0) || !(self.max_curvature >= 0.0) {
            return bad("noise and curvature bounds must be nonnegative");
        }
        Ok(())
    }

    /// Upper bound on the planar length of any one-step displacement.
    pub fn max_step_length(&self) -> f64 {
        SPEED_CAP * self.dt + 2.0 * self.noise
    }

    /// Upper bound on the heading change of any one step.
    pub fn max_step_turn(&self) -> f64 {
        self.max_curvature * SPEED_CAP * self.dt + 2.0 * self.heading_noise
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: Pose2,
    length: f64,
    curvature: f64,
}

impl Segment {
    fn pose_at(&self, s: f64) -> Pose2 {
        let Pose2 { x, y, theta } = self.start;
        let k = self.curvature;
        if k.abs() < 1e-12 {
            let (sn, cs) = theta.sin_cos();
            return Pose2::new(x + s * cs, y + s * sn, theta);
        }
        let t1 = theta + k * s;
        Pose2::new(x + (t1.sin() - theta.sin()) / k, y - (t1.cos() - theta.cos()) / k, t1)
    }
}

#[derive(Debug, Clone)]
struct Lane {
    segments: Vec<Segment>,
    speed_limit: f64,
    left: Boundary,
    right: Boundary,
}

impl Lane {
    /// Centerline pose and curvature at arclength `s`; the last segment extends indefinitely.
    fn at(&self, mut s: f64) -> (Pose2, f64) {
        for (i, seg) in self.segments.iter().enumerate() {
            if s <= seg.length || i + 1 == self.segments.len() {
                return (seg.pose_at(s), seg.curvature);
            }
            s -= seg.length;
        }
        unreachable!("lanes have at least one segment")
    }
}

fn random_lane(cfg: &SceneGenConfig, rng: &mut ChaCha8Rng) -> Lane {
    let mut start = Pose2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-PI..PI));
    let mut segments = Vec::with_capacity(SEGMENTS_PER_LANE);
    for _ in 0..SEGMENTS_PER_LANE {
        let length = rng.random_range(30.0..60.0);
        let curvature =
            if rng.random_bool(0.5) || cfg.max_curvature == 0.0 { 0.0 } else { rng.random_range(-cfg.max_curvature..=cfg.max_curvature) };
        let seg = Segment { start, length, curvature };
        start = seg.pose_at(length);
        segments.push(seg);
    }
    let limits = [8.9, 13.4, 17.9];
    Lane {
        segments,
        speed_limit: limits[rng.random_range(0..limits.len())],
        left: Boundary::ALL[rng.random_range(0..4)],
        right: Boundary::ALL[rng.random_range(0..4)],
    }
}

struct AgentPlan {
    lane: usize,
    s0: f64,
    v0: f64,
    accel: f64,
    vmax: f64,
}

fn class_profile(class: AgentClass, rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64, f64) {
    // (length, width, v0, accel, vmax)
    match class {
        AgentClass::Vehicle => {
            (rng.random_range(4.0..5.2), rng.random_range(1.7..2.1), rng.random_range(3.0..12.0), rng.random_range(-1.0..1.0), SPEED_CAP)
        }
        AgentClass::Cyclist => {
            (rng.random_range(1.6..1.9), rng.random_range(0.5..0.8), rng.random_range(2.0..6.0), rng.random_range(-0.3..0.3), 8.0)
        }
        AgentClass::Pedestrian => {
            (rng.random_range(0.4..0.7), rng.random_range(0.4..0.7), rng.random_range(0.5..1.8), rng.random_range(-0.1..0.1), 2.5)
        }
    }
}

/// Deterministic lane-following scene. Agent 0 is the ego vehicle; every
/// agent has a state at every step of the horizon.
pub fn generate_synthetic_scene(cfg: &SceneGenConfig, seed: u64) -> Result<Scene, SceneError> {
    Ok(generate_with_lanes(cfg, seed)?.0)
}

fn generate_with_lanes(cfg: &SceneGenConfig, seed: u64) -> Result<(Scene, Vec<Lane>, Vec<Vec<f64>>), SceneError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes: Vec<Lane> = (0..cfg.lanes).map(|_| random_lane(cfg, &mut rng)).collect();

    let mut map = Vec::with_capacity(cfg.lanes * cfg.nodes_per_lane);
    for lane in &lanes {
        for i in 0..cfg.nodes_per_lane {
            let (pose, curvature) = lane.at(i as f64 * cfg.node_length);
            map.push(MapNode {
                pose,
                length: cfg.node_length,
                width: 3.5,
                curvature,
                speed_limit: lane.speed_limit,
                boundary_left: lane.left,
                boundary_right: lane.right,
            });
        }
    }

    let mut agents = Vec::with_capacity(cfg.agents);
    let mut arclengths = Vec::with_capacity(cfg.agents);
    for n in 0..cfg.agents {
        let class = if n == 0 {
            AgentClass::Vehicle
        } else {
            match rng.random_range(0..4) {
                0 | 1 => AgentClass::Vehicle,
                2 => AgentClass::Pedestrian,
                _ => AgentClass::Cyclist,
            }
        };
        let (length, width, v0, accel, vmax) = class_profile(class, &mut rng);
        let plan = AgentPlan { lane: rng.random_range(0..cfg.lanes), s0: rng.random_range(0.0..15.0), v0, accel, vmax };
        let lane = &lanes[plan.lane];
        let mut states = Vec::with_capacity(cfg.horizon);
        let mut svals = Vec::with_capacity(cfg.horizon);
        let mut s = plan.s0;
        let mut prev: Option<Pose2> = None;
        for t in 0..cfg.horizon {
            let (base, _) = lane.at(s);
            let e = if cfg.noise > 0.0 { rng.random_range(-cfg.noise..=cfg.noise) } else { 0.0 };
            let h = if cfg.heading_noise > 0.0 { rng.random_range(-cfg.heading_noise..=cfg.heading_noise) } else { 0.0 };
            let pose = base.compose(&Pose2::new(0.0, e, h));
            let v = (plan.v0 + plan.accel * t as f64 * cfg.dt).clamp(0.0, plan.vmax);
            let speed = match prev {
                None => v,
                Some(p) => (pose.x - p.x).hypot(pose.y - p.y) / cfg.dt,
            };
            states.push(AgentState { t, pose: Pose2 { theta: wrap_angle(pose.theta), ..pose }, speed });
            svals.push(s);
            prev = Some(pose);
            s += v * cfg.dt;
        }
        agents.push(Agent { id: n as i64, class, length, width, states });
        arclengths.push(svals);
    }
    let scene = Scene { dt: cfg.dt, horizon: cfg.horizon, ego_id: 0, agents, map };
    Ok((scene, lanes, arclengths))
}
