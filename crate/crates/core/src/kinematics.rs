//! Planar 2R kinematics.
//!
//! Base frame: +y points away from the user, +x to the user's right.
//! θ1 is measured from +y, positive clockwise; θ2 is relative to link 1,
//! positive counter-clockwise. With θ = (0, 0) the arm lies along +y.
//!
//! Lengths and positions share whatever unit the caller uses; the task
//! level works in millimetres.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Mat2, Vec2};
use crate::error::{Error, Result};

/// End-effector position in the base frame, mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
}

impl PlanarPose {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &PlanarPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_vec(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<Vec2> for PlanarPose {
    fn from(v: Vec2) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Sign of the elbow angle selected by the inverse kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Elbow {
    /// θ2 ≥ 0: link 2 folds toward −x, away from the user. This is the
    /// branch the joint limits admit.
    #[default]
    Up,
    /// θ2 ≤ 0.
    Down,
}

/// Joint-space box, rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl JointLimits {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    /// Limits from the upper bounds in degrees, with both lower bounds at zero.
    pub fn from_max_deg(max1: f64, max2: f64) -> Self {
        Self { min: [0.0; 2], max: [max1.to_radians(), max2.to_radians()] }
    }

    pub fn contains(&self, theta: &Vec2, tol: f64) -> bool {
        (0..2).all(|i| theta[i] >= self.min[i] - tol && theta[i] <= self.max[i] + tol)
    }
}

pub fn forward_kinematics(l1: f64, l2: f64, theta: &Vec2) -> PlanarPose {
    let rel = theta[1] - theta[0];
    PlanarPose::new(l1 * theta[0].sin() - l2 * rel.sin(), l1 * theta[0].cos() + l2 * rel.cos())
}

/// Elbow (link 1 tip) position.
pub fn elbow_position(l1: f64, theta: &Vec2) -> PlanarPose {
    PlanarPose::new(l1 * theta[0].sin(), l1 * theta[0].cos())
}

/// ∂(x, y)/∂(θ1, θ2).
pub fn jacobian(l1: f64, l2: f64, theta: &Vec2) -> Mat2 {
    let rel = theta[1] - theta[0];
    let (s1, c1) = theta[0].sin_cos();
    let (sr, cr) = rel.sin_cos();
    Mat2::new(l1 * c1 + l2 * cr, -l2 * cr, -l1 * s1 + l2 * sr, -l2 * sr)
}

/// End-effector speed for joint rates `theta_dot`.
pub fn tip_speed(l1: f64, l2: f64, theta: &Vec2, theta_dot: &Vec2) -> f64 {
    (jacobian(l1, l2, theta) * theta_dot).norm()
}

fn wrap(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Closed-form inverse kinematics on one elbow branch, without limit checks.
pub fn inverse_kinematics_unchecked(l1: f64, l2: f64, p: &PlanarPose, elbow: Elbow) -> Result<Vec2> {
    if !p.is_finite() {
        return Err(Error::NonFinite("target pose"));
    }
    let r = p.norm();
    let tol = 1e-9 * (l1 + l2);
    if r > l1 + l2 + tol || r < (l1 - l2).abs() - tol {
        return Err(Error::Unreachable { x: p.x, y: p.y });
    }
    let c2 = ((r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let mut q2 = c2.acos();
    if elbow == Elbow::Down {
        q2 = -q2;
    }
    let beta = (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    let psi = p.x.atan2(p.y);
    Ok(Vec2::new(wrap(psi + beta), q2))
}

/// Inverse kinematics that also enforces the joint limits.
pub fn inverse_kinematics(l1: f64, l2: f64, p: &PlanarPose, elbow: Elbow, limits: &JointLimits) -> Result<Vec2> {
    let q = inverse_kinematics_unchecked(l1, l2, p, elbow)?;
    if !limits.contains(&q, 1e-12) {
        return Err(Error::OutOfLimits(q[0].to_degrees(), q[1].to_degrees()));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const L1: f64 = 674.0;
    const L2: f64 = 545.0;

    fn deg(a: f64, b: f64) -> Vec2 {
        Vec2::new(a.to_radians(), b.to_radians())
    }

    #[test]
    fn fully_extended() {
        let p = forward_kinematics(L1, L2, &deg(0.0, 0.0));
        assert_relative_eq!(p.x, 0.0);
        assert_relative_eq!(p.y, 1219.0);
    }

    #[test]
    fn right_angle_elbow() {
        let p = forward_kinematics(L1, L2, &deg(0.0, 90.0));
        assert_relative_eq!(p.x, -545.0, epsilon = 1e-9);
        assert_relative_eq!(p.y, 674.0, epsilon = 1e-9);
    }

    #[test]
    fn shoulder_rotates_toward_positive_x() {
        let p = forward_kinematics(L1, L2, &deg(90.0, 0.0));
        assert_relative_eq!(p.x, 1219.0, epsilon = 1e-9);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn singular_when_straight_or_folded() {
        for q2 in [0.0, 180.0] {
            let j = jacobian(L1, L2, &deg(30.0, q2));
            assert!(j.determinant().abs() < 1e-9);
        }
        let j = jacobian(L1, L2, &deg(30.0, 60.0));
        assert_relative_eq!(j.determinant(), -L1 * L2 * 60f64.to_radians().sin(), max_relative = 1e-12);
    }

    #[test]
    fn ik_boundary_of_annulus() {
        let lim = JointLimits::from_max_deg(65.0, 125.0);
        for elbow in [Elbow::Up, Elbow::Down] {
            let q = inverse_kinematics_unchecked(L1, L2, &PlanarPose::new(0.0, 1219.0), elbow).unwrap();
            assert!(q.norm() < 1e-6, "{q:?}");
        }
        let q = inverse_kinematics(L1, L2, &PlanarPose::new(0.0, 1219.0), Elbow::Up, &lim).unwrap();
        assert!(q.norm() < 1e-6);
    }

    #[test]
    fn ik_unreachable() {
        let e = inverse_kinematics_unchecked(L1, L2, &PlanarPose::new(0.0, 1300.0), Elbow::Up);
        assert!(matches!(e, Err(Error::Unreachable { .. })));
        let e = inverse_kinematics_unchecked(L1, L2, &PlanarPose::new(0.0, 100.0), Elbow::Up);
        assert!(matches!(e, Err(Error::Unreachable { .. })));
    }

    #[test]
    fn ik_out_of_limits() {
        let lim = JointLimits::from_max_deg(65.0, 125.0);
        let e = inverse_kinematics(L1, L2, &PlanarPose::new(-23.62, 650.69), Elbow::Down, &lim);
        assert!(matches!(e, Err(Error::OutOfLimits(..))));
    }

    #[test]
    fn ik_tracking_target_round_trip() {
        let lim = JointLimits::from_max_deg(65.0, 125.0);
        let target = PlanarPose::new(-23.62, 650.69);
        let q = inverse_kinematics(L1, L2, &target, Elbow::Up, &lim).unwrap();
        let back = forward_kinematics(L1, L2, &q);
        assert!(back.distance(&target) < 1e-9);
        // Law-of-cosines values for this target.
        assert_relative_eq!(q[0].to_degrees(), 46.454229, epsilon = 1e-5);
        assert_relative_eq!(q[1].to_degrees(), 116.460089, epsilon = 1e-5);
    }
}
