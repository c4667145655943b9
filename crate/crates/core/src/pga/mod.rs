//! The planar projective geometric algebra with basis
//! `{1, e0, e1, e2, e01, e20, e12, e012}`, `e0^2 = 0`, `e1^2 = e2^2 = 1`.
//!
//! Points are bivectors `x e20 + y e01 + e12`, lines are vectors
//! `a e1 + b e2 + c e0`, and roto-translations are [`Motor`]s acting by
//! the sandwich product `u x u^{-1}`.

mod encode;
mod motor;
mod multivector;
pub mod tables;

pub use encode::{decode_line, decode_point, encode_line, encode_point, IDEAL_POINT_THRESHOLD};
pub use motor::{motor_from_pose, motor_inverse, sandwich, wrap_angle, Motor, Pose2, RENORM_THRESHOLD, UNIT_TOLERANCE};
pub use multivector::{Multivector, BASIS_NAMES};
pub use tables::idx;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PgaError {
    #[error("motor is not unit: sqrt(s^2 + e12^2) = {norm}")]
    NonUnitMotor { norm: f64 },
    #[error("point at infinity (e12 weight {weight})")]
    IdealPoint { weight: f64 },
    #[error("degenerate line: (a, b) = (0, 0)")]
    DegenerateLine,
    #[error("grade {0} out of range 0..=3")]
    GradeOutOfRange(usize),
}
