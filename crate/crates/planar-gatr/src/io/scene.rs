use serde::{Deserialize, Serialize};

use planar_gatr_core::scene::{Agent, AgentClass, AgentState, Boundary, MapNode, Scene};
use planar_gatr_core::Pose2;

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ClassDto {
    Vehicle,
    Pedestrian,
    Cyclist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BoundaryDto {
    None,
    Dashed,
    Solid,
    Curb,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDto {
    t: usize,
    x: f64,
    y: f64,
    theta: f64,
    speed: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDto {
    id: i64,
    class: ClassDto,
    length: f64,
    width: f64,
    states: Vec<StateDto>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapNodeDto {
    x: f64,
    y: f64,
    theta: f64,
    length: f64,
    width: f64,
    curvature: f64,
    speed_limit: f64,
    boundary_left: BoundaryDto,
    boundary_right: BoundaryDto,
}

/// The on-disk scene layout. Every field is required and unknown fields are rejected.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDto {
    dt: f64,
    horizon: usize,
    ego_id: i64,
    agents: Vec<AgentDto>,
    map: Vec<MapNodeDto>,
}

fn class_dto(c: AgentClass) -> ClassDto {
    match c {
        AgentClass::Vehicle => ClassDto::Vehicle,
        AgentClass::Pedestrian => ClassDto::Pedestrian,
        AgentClass::Cyclist => ClassDto::Cyclist,
    }
}

fn class_from(c: ClassDto) -> AgentClass {
    match c {
        ClassDto::Vehicle => AgentClass::Vehicle,
        ClassDto::Pedestrian => AgentClass::Pedestrian,
        ClassDto::Cyclist => AgentClass::Cyclist,
    }
}

fn boundary_dto(b: Boundary) -> BoundaryDto {
    match b {
        Boundary::None => BoundaryDto::None,
        Boundary::Dashed => BoundaryDto::Dashed,
        Boundary::Solid => BoundaryDto::Solid,
        Boundary::Curb => BoundaryDto::Curb,
    }
}

fn boundary_from(b: BoundaryDto) -> Boundary {
    match b {
        BoundaryDto::None => Boundary::None,
        BoundaryDto::Dashed => Boundary::Dashed,
        BoundaryDto::Solid => Boundary::Solid,
        BoundaryDto::Curb => Boundary::Curb,
    }
}

impl From<&Scene> for SceneDto {
    fn from(s: &Scene) -> Self {
        SceneDto {
            dt: s.dt,
            horizon: s.horizon,
            ego_id: s.ego_id,
            agents: s
                .agents
                .iter()
                .map(|a| AgentDto {
                    id: a.id,
                    class: class_dto(a.class),
                    length: a.length,
                    width: a.width,
                    states: a
                        .states
                        .iter()
                        .map(|st| StateDto { t: st.t, x: st.pose.x, y: st.pose.y, theta: st.pose.theta, speed: st.speed })
                        .collect(),
                })
                .collect(),
            map: s
                .map
                .iter()
                .map(|m| MapNodeDto {
                    x: m.pose.x,
                    y: m.pose.y,
                    theta: m.pose.theta,
                    length: m.length,
                    width: m.width,
                    curvature: m.curvature,
                    speed_limit: m.speed_limit,
                    boundary_left: boundary_dto(m.boundary_left),
                    boundary_right: boundary_dto(m.boundary_right),
                })
                .collect(),
        }
    }
}

impl From<SceneDto> for Scene {
    fn from(d: SceneDto) -> Self {
        Scene {
            dt: d.dt,
            horizon: d.horizon,
            ego_id: d.ego_id,
            agents: d
                .agents
                .into_iter()
                .map(|a| Agent {
                    id: a.id,
                    class: class_from(a.class),
                    length: a.length,
                    width: a.width,
                    states: a
                        .states
                        .into_iter()
                        // Pose2 fields are set directly so the angle is stored bit for bit.
                        .map(|s| AgentState { t: s.t, pose: Pose2 { x: s.x, y: s.y, theta: s.theta }, speed: s.speed })
                        .collect(),
                })
                .collect(),
            map: d
                .map
                .into_iter()
                .map(|m| MapNode {
                    pose: Pose2 { x: m.x, y: m.y, theta: m.theta },
                    length: m.length,
                    width: m.width,
                    curvature: m.curvature,
                    speed_limit: m.speed_limit,
                    boundary_left: boundary_from(m.boundary_left),
                    boundary_right: boundary_from(m.boundary_right),
                })
                .collect(),
        }
    }
}

pub fn scene_to_json(s: &Scene) -> Vec<u8> {
    serde_json::to_vec_pretty(&SceneDto::from(s)).expect("scene serialization cannot fail")
}

/// Parses and validates a scene. Errors name the offending field and position.
pub fn scene_from_json(bytes: &[u8]) -> Result<Scene, IoError> {
    let dto: SceneDto = serde_json::from_slice(bytes).map_err(|e| IoError::Parse { what: "scene", msg: e.to_string() })?;
    let scene = Scene::from(dto);
    scene.validate()?;
    Ok(scene)
}
