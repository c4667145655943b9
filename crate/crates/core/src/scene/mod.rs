//! Traffic scenes: agents, map nodes, token encodings, the discrete action
//! vocabulary, the dynamics model and a synthetic scene generator.

mod dynamics;
mod gen;
mod vocab;

pub use dynamics::{agent_deltas, dynamics_step, local_delta, recenter_scene, transform_scene, Delta};
pub use gen::{generate_synthetic_scene, SceneGenConfig};
pub use vocab::{build_kdisk_vocab, delta_distance, select_radius, transitions_by_class, ActionVocab, DEFAULT_HEADING_WEIGHT};

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::pga::tables::idx;
use crate::pga::{encode_point, Multivector, Pose2};
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("agent {agent} has no state at step {t}")]
    MissingState { agent: i64, t: usize },
    #[error("ego agent {0} not present")]
    MissingEgo(i64),
    #[error("dt must be positive, got {0}")]
    BadDt(f64),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("no transitions for class {0}")]
    EmptyTransitions(&'static str),
    #[error("k-disk radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("token {token} out of range for class {class} ({size} entries)")]
    TokenRange { token: usize, class: &'static str, size: usize },
    #[error("invalid generator config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 3] = [AgentClass::Vehicle, AgentClass::Pedestrian, AgentClass::Cyclist];

    pub fn index(self) -> usize {
        match self {
            AgentClass::Vehicle => 0,
            AgentClass::Pedestrian => 1,
            AgentClass::Cyclist => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Vehicle => "vehicle",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Cyclist => "cyclist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AgentClass::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    None,
    Dashed,
    Solid,
    Curb,
}

impl Boundary {
    pub const ALL: [Boundary; 4] = [Boundary::None, Boundary::Dashed, Boundary::Solid, Boundary::Curb];

    pub fn index(self) -> usize {
        match self {
            Boundary::None => 0,
            Boundary::Dashed => 1,
            Boundary::Solid => 2,
            Boundary::Curb => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::None => "none",
            Boundary::Dashed => "dashed",
            Boundary::Solid => "solid",
            Boundary::Curb => "curb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Boundary::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub t: usize,
    pub pose: Pose2,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: i64,
    pub class: AgentClass,
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl Agent {
    pub fn state_at(&self, t: usize) -> Option<&AgentState> {
        self.states.binary_search_by_key(&t, |s| s.t).ok().map(|i| &self.states[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapNode {
    pub pose: Pose2,
    pub length: f64,
    pub width: f64,
    pub curvature: f64,
    pub speed_limit: f64,
    pub boundary_left: Boundary,
    pub boundary_right: Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dt: f64,
    pub horizon: usize,
    pub ego_id: i64,
    pub agents: Vec<Agent>,
    pub map: Vec<MapNode>,
}

impl Scene {
    pub fn ego(&self) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == self.ego_id)
    }

    /// Checks every structural invariant of a scene.
    pub fn validate(&self) -> Result<(), SceneError> {
        use alloc::format;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SceneError::BadDt(self.dt));
        }
        if self.ego().is_none() {
            return Err(SceneError::MissingEgo(self.ego_id));
        }
        let mut ids: Vec<i64> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SceneError::Invalid("duplicate agent id".into()));
        }
        for a in &self.agents {
            if !(a.length > 0.0 && a.width > 0.0) {
                return Err(SceneError::Invalid(format!("agent {}: nonpositive size", a.id)));
            }
            if a.states.windows(2).any(|w| w[0].t >= w[1].t) {
                return Err(SceneError::Invalid(format!("agent {}: steps not strictly increasing", a.id)));
            }
            for s in &a.states {
                if !(s.speed >= 0.0) || !s.pose.is_finite() || !s.speed.is_finite() {
                    return Err(SceneError::Invalid(format!("agent {}: bad state at step {}", a.id, s.t)));
                }
                if s.t >= self.horizon {
                    return Err(SceneError::Invalid(format!("agent {}: step {} beyond horizon {}", a.id, s.t, self.horizon)));
                }
            }
        }
        for (i, m) in self.map.iter().enumerate() {
            if !(m.length > 0.0) || !(m.speed_limit >= 0.0) || !m.pose.is_finite() {
                return Err(SceneError::Invalid(format!("map node {i}: bad attributes")));
            }
        }
        Ok(())
    }
}

/// Point `(x, y)` in the bivector part plus the unit-normal line through it
/// along the heading in the vector part.
pub fn encode_token_pose(p: &Pose2) -> Multivector {
    let (s, c) = p.theta.sin_cos();
    let mut m = encode_point(p.x, p.y);
    m[idx::E1] = -s;
    m[idx::E2] = c;
    m[idx::E0] = p.x * s - p.y * c;
    m
}

pub const AGENT_FEATURES: usize = 6;
pub const MAP_FEATURES: usize = 12;

/// `[speed, length, width, one-hot class (3)]`.
pub fn agent_raw_features(a: &Agent, t: usize) -> Result<[f64; AGENT_FEATURES], SceneError> {
    let s = a.state_at(t).ok_or(SceneError::MissingState { agent: a.id, t })?;
    let mut f = [0.0; AGENT_FEATURES];
    f[0] = s.speed;
    f[1] = a.length;
    f[2] = a.width;
    f[3 + a.class.index()] = 1.0;
    Ok(f)
}

/// `[length, width, curvature, speed limit, one-hot left (4), one-hot right (4)]`.
pub fn map_raw_features(m: &MapNode) -> [f64; MAP_FEATURES] {
    let mut f = [0.0; MAP_FEATURES];
    f[0] = m.length;
    f[1] = m.width;
    f[2] = m.curvature;
    f[3] = m.speed_limit;
    f[4 + m.boundary_left.index()] = 1.0;
    f[8 + m.boundary_right.index()] = 1.0;
    f
}
