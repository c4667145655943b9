use core::f64::consts::PI;

use super::multivector::Multivector;
use super::tables::{self, idx};
use super::PgaError;
#[allow(unused_imports)]
use num_traits::Float;

/// Tolerance on `s^2 + e12^2 = 1` beyond which a motor is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Composition renormalizes once the norm drifts by more than this.
pub const RENORM_THRESHOLD: f64 = 1e-12;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// A planar pose: position in meters, heading in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta: wrap_angle(theta) }
    }

    /// Group product `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(self.x + c * other.x - s * other.y, self.y + s * other.x + c * other.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// `self^{-1} ∘ other`: the pose of `other` in the frame of `self`.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * x - s * y, self.y + s * x + c * y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// A unit even-grade multivector `[s, e01, e20, e12]` acting by sandwich product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motor(pub [f64; 4]);

impl Default for Motor {
    fn default() -> Self {
        Motor::IDENTITY
    }
}

impl Motor {
    pub const IDENTITY: Motor = Motor([1.0, 0.0, 0.0, 0.0]);

    /// Wraps raw coefficients, rejecting non-unit input.
    pub fn new(coeffs: [f64; 4]) -> Result<Self, PgaError> {
        let m = Motor(coeffs);
        m.check_unit()?;
        Ok(m)
    }

    pub fn translator(a: f64, b: f64) -> Self {
        Motor([1.0, -0.5 * a, 0.5 * b, 0.0])
    }

    /// Counterclockwise rotation about the origin.
    pub fn rotor(theta: f64) -> Self {
        let (s, c) = (0.5 * theta).sin_cos();
        Motor([c, 0.0, 0.0, -s])
    }

    /// `translator(x, y) * rotor(theta)`: maps the origin frame onto `p`.
    pub fn from_pose(p: &Pose2) -> Self {
        Motor::translator(p.x, p.y).compose(&Motor::rotor(p.theta))
    }

    /// Recovers the pose this motor maps the origin frame to.
    pub fn to_pose(&self) -> Pose2 {
        let origin = self.apply(&Multivector::E12);
        let e1 = self.apply(&Multivector::E1);
        Pose2::new(origin[idx::E20], origin[idx::E01], e1[idx::E2].atan2(e1[idx::E1]))
    }

    pub fn coeffs(&self) -> &[f64; 4] {
        &self.0
    }

    /// `s^2 + e12^2`; equals `u ũ` for any even element.
    pub fn norm_sq(&self) -> f64 {
        self.0[0] * self.0[0] + self.0[3] * self.0[3]
    }

    pub fn check_unit(&self) -> Result<(), PgaError> {
        let n = self.norm_sq().sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(PgaError::NonUnitMotor { norm: n });
        }
        Ok(())
    }

    pub fn to_multivector(&self) -> Multivector {
        let [s, e01, e20, e12] = self.0;
        Multivector([s, 0.0, 0.0, 0.0, e01, e20, e12, 0.0])
    }

    /// Takes the even part; errors if the result is not a unit motor.
    pub fn from_multivector(m: &Multivector) -> Result<Self, PgaError> {
        Motor::new([m[idx::S], m[idx::E01], m[idx::E20], m[idx::E12]])
    }

    pub fn reverse(&self) -> Self {
        let [s, e01, e20, e12] = self.0;
        Motor([s, -e01, -e20, -e12])
    }

    pub fn inverse(&self) -> Result<Self, PgaError> {
        self.check_unit()?;
        Ok(self.reverse())
    }

    /// Geometric product `self * other`, renormalized when drift exceeds 1e-12.
    pub fn compose(&self, other: &Motor) -> Motor {
        let p = self.to_multivector().geometric_product(&other.to_multivector());
        let mut m = Motor([p[idx::S], p[idx::E01], p[idx::E20], p[idx::E12]]);
        let n = m.norm_sq().sqrt();
        if (n - 1.0).abs() > RENORM_THRESHOLD && n > 0.0 {
            m.0 = m.0.map(|c| c / n);
        }
        m
    }

    /// `u x u^{-1}` without the unit check; callers guarantee a unit motor.
    pub fn apply(&self, x: &Multivector) -> Multivector {
        Multivector(tables::sandwich(&self.to_multivector().0, &x.0))
    }

    /// 8x8 matrix of the sandwich action, row-major.
    pub fn matrix(&self) -> [[f64; 8]; 8] {
        tables::sandwich_matrix(&self.to_multivector().0)
    }

    /// Equality as group elements (`u` and `-u` act identically).
    pub fn approx_eq_action(&self, other: &Motor, tol: f64) -> bool {
        let d1 = self.0.iter().zip(other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let d2 = self.0.iter().zip(other.0).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        d1 <= tol || d2 <= tol
    }
}

/// `u x u^{-1}` for a unit motor `u`.
pub fn sandwich(u: &Motor, x: &Multivector) -> Result<Multivector, PgaError> {
    let inv = u.inverse()?.to_multivector();
    Ok(u.to_multivector().geometric_product(x).geometric_product(&inv))
}

pub fn motor_from_pose(p: &Pose2) -> Motor {
    Motor::from_pose(p)
}

pub fn motor_inverse(u: &Motor) -> Result<Motor, PgaError> {
    u.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_pose_motor() {
        assert_eq!(Motor::from_pose(&Pose2::IDENTITY), Motor::IDENTITY);
    }

    #[test]
    fn pure_translation_pose() {
        let m = Motor::from_pose(&Pose2::new(2.0, -3.0, 0.0));
        assert_eq!(m.0, [1.0, -1.0, -1.5, 0.0]);
    }

    #[test]
    fn inverses_match_table() {
        let t = Motor::translator(2.0, 4.0).inverse().unwrap();
        assert_eq!(t.0, [1.0, 1.0, -2.0, 0.0]);
        let th = 0.7f64;
        let r = Motor::rotor(th).inverse().unwrap();
        assert!((r.0[0] - (th / 2.0).cos()).abs() < 1e-15);
        assert!((r.0[3] - (th / 2.0).sin()).abs() < 1e-15);
        assert_eq!(Motor::IDENTITY.inverse().unwrap(), Motor::IDENTITY);
    }

    #[test]
    fn non_unit_rejected() {
        let m = Motor([2.0, 0.0, 0.0, 0.0]);
        assert!(matches!(m.inverse(), Err(PgaError::NonUnitMotor { .. })));
        assert!(sandwich(&m, &Multivector::E1).is_err());
        assert!(Motor::new([1.0 + 1e-6, 0.0, 0.0, 0.0]).is_err());
        assert!(Motor::new([1.0 + 1e-11, 0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn to_pose_roundtrip() {
        let p = Pose2::new(3.0, -1.5, 2.2);
        let q = Motor::from_pose(&p).to_pose();
        assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
        assert!(wrap_angle(p.theta - q.theta).abs() < 1e-12);
    }

    #[test]
    fn pose_compose_inverse() {
        let p = Pose2::new(1.0, 2.0, 0.3);
        let e = p.compose(&p.inverse());
        assert!(e.x.abs() < 1e-12 && e.y.abs() < 1e-12 && e.theta.abs() < 1e-12);
    }
}
