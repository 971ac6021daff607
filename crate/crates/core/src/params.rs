//! Physical constants of the two-link elastic-joint arm.
//!
//! Everything here is SI internally. The serialized form (the harness JSON
//! config) carries angles in degrees and angular rates in deg/s; conversion
//! happens in the serde layer so the rest of the crate only sees radians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Violation};
use crate::kinematics::JointLimits;

/// Parameters of the two-link arm with variable-stiffness joints.
///
/// Index 0 is the shoulder joint (link 1), index 1 the elbow (link 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmParams {
    /// Link lengths, m.
    pub link_length: [f64; 2],
    /// Link masses, kg.
    pub link_mass: [f64; 2],
    /// Distance from joint axis to link centre of mass, m.
    pub com_offset: [f64; 2],
    /// Link rotational inertia about its centre of mass, kg·m².
    pub link_inertia: [f64; 2],
    /// Motor-side reflected inertia, kg·m².
    pub motor_inertia: [f64; 2],
    /// Link-side viscous friction, N·m·s/rad.
    pub link_damping: [f64; 2],
    /// Motor-side viscous friction, N·m·s/rad.
    pub motor_damping: [f64; 2],
    /// Tilt of the operating plane from horizontal.
    #[serde(rename = "plane_tilt_deg", with = "deg")]
    pub plane_tilt: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    #[serde(rename = "joint_min_deg", with = "deg2")]
    pub joint_min: [f64; 2],
    #[serde(rename = "joint_max_deg", with = "deg2")]
    pub joint_max: [f64; 2],
    /// Motor torque saturation, N·m.
    pub torque_max: f64,
    /// Joint speed limit.
    #[serde(rename = "speed_max_deg_s", with = "deg")]
    pub speed_max: f64,
    /// Stiffness bounds, N·m/rad.
    pub stiffness_min: f64,
    pub stiffness_max: f64,
    /// Time to sweep the full stiffness range, s.
    pub stiffness_time: f64,
    /// Stiffness of the simulated mechanical end stop, N·m/rad.
    pub limit_stiffness: f64,
    /// Damping of the simulated end stop, N·m·s/rad.
    pub limit_damping: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self::preset()
    }
}

impl ArmParams {
    /// Default arm: 674/545 mm carbon-fibre tube links.
    ///
    /// Link 1 carries the elbow actuator lumped at its distal end
    /// (0.35 kg tube + 1.6 kg actuator). Link 2 carries the knife module,
    /// force sensor and linear actuator near the tip (0.25 kg tube + 0.6 kg).
    /// Inertias follow from the parallel-axis theorem on those masses.
    pub fn preset() -> Self {
        Self {
            link_length: [0.674, 0.545],
            link_mass: [1.95, 0.85],
            com_offset: [0.6135, 0.4331],
            link_inertia: [0.050, 0.016],
            motor_inertia: [0.12, 0.08],
            link_damping: [0.02, 0.02],
            motor_damping: [0.30, 0.20],
            plane_tilt: 0.0,
            gravity: 9.81,
            joint_min: [0.0, 0.0],
            joint_max: [65f64.to_radians(), 125f64.to_radians()],
            torque_max: 35.0,
            speed_max: 120f64.to_radians(),
            stiffness_min: 70.0,
            stiffness_max: 8000.0,
            stiffness_time: 0.450,
            limit_stiffness: 2.0e4,
            limit_damping: 20.0,
        }
    }

    /// Same arm with all friction removed.
    pub fn frictionless(mut self) -> Self {
        self.link_damping = [0.0; 2];
        self.motor_damping = [0.0; 2];
        self
    }

    /// Maximum stiffness slew rate of the actuator, N·m/rad per second.
    pub fn stiffness_rate(&self) -> f64 {
        (self.stiffness_max - self.stiffness_min) / self.stiffness_time
    }

    pub fn link_length_mm(&self) -> (f64, f64) {
        (self.link_length[0] * 1000.0, self.link_length[1] * 1000.0)
    }

    pub fn joint_limits(&self) -> JointLimits {
        JointLimits::new(self.joint_min, self.joint_max)
    }

    pub fn clamp_stiffness(&self, k: f64) -> f64 {
        k.clamp(self.stiffness_min, self.stiffness_max)
    }

    /// Collect every invariant violation under `prefix` (a config field path).
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                out.push(Violation::new(format!("{prefix}.{field}"), msg));
            }
        };
        for i in 0..2 {
            check(self.link_length[i] > 0.0, &format!("link_length[{i}]"), "must be > 0");
            check(self.link_mass[i] > 0.0, &format!("link_mass[{i}]"), "must be > 0");
            check(self.com_offset[i] > 0.0, &format!("com_offset[{i}]"), "must be > 0");
            check(
                self.com_offset[i] <= self.link_length[i],
                &format!("com_offset[{i}]"),
                "must not exceed the link length",
            );
            check(self.link_inertia[i] > 0.0, &format!("link_inertia[{i}]"), "must be > 0");
            check(self.motor_inertia[i] > 0.0, &format!("motor_inertia[{i}]"), "must be > 0");
            check(self.link_damping[i] >= 0.0, &format!("link_damping[{i}]"), "must be >= 0");
            check(self.motor_damping[i] >= 0.0, &format!("motor_damping[{i}]"), "must be >= 0");
            check(
                self.joint_min[i] <= self.joint_max[i],
                &format!("joint_max_deg[{i}]"),
                "must not be below joint_min_deg",
            );
        }
        check(self.gravity >= 0.0, "gravity", "must be >= 0");
        check(self.torque_max > 0.0, "torque_max", "must be > 0");
        check(self.speed_max > 0.0, "speed_max_deg_s", "must be > 0");
        check(self.stiffness_min > 0.0, "stiffness_min", "must be > 0");
        check(self.stiffness_min < self.stiffness_max, "stiffness_min", "must be below stiffness_max");
        check(self.stiffness_time > 0.0, "stiffness_time", "must be > 0");
        check(self.limit_stiffness >= 0.0, "limit_stiffness", "must be >= 0");
        check(self.limit_damping >= 0.0, "limit_damping", "must be >= 0");
        let finite = self
            .link_length
            .iter()
            .chain(&self.link_mass)
            .chain(&self.com_offset)
            .chain(&self.link_inertia)
            .chain(&self.motor_inertia)
            .chain(&self.link_damping)
            .chain(&self.motor_damping)
            .chain(&self.joint_min)
            .chain(&self.joint_max)
            .chain([
                &self.plane_tilt,
                &self.gravity,
                &self.torque_max,
                &self.speed_max,
                &self.stiffness_min,
                &self.stiffness_max,
                &self.stiffness_time,
                &self.limit_stiffness,
                &self.limit_damping,
            ])
            .all(|v| v.is_finite());
        check(finite, "*", "all values must be finite");
        out
    }

    pub fn validate(&self) -> Result<(), Error> {
        let v = self.violations("arm");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

/// serde helper: f64 stored in degrees.
pub(crate) mod deg {
    use serde::{Deserialize, Deserializer, Serializer};

    /// Degrees rounded to 1e-9 so round values print cleanly.
    pub fn to_deg(v: f64) -> f64 {
        (v.to_degrees() * 1e9).round() / 1e9
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(to_deg(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(f64::deserialize(d)?.to_radians())
    }
}

/// serde helper: `[f64; 2]` stored in degrees.
pub(crate) mod deg2 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
        [super::deg::to_deg(v[0]), super::deg::to_deg(v[1])].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 2], D::Error> {
        let v = <[f64; 2]>::deserialize(d)?;
        Ok([v[0].to_radians(), v[1].to_radians()])
    }
}
