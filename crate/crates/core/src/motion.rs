//! Reference generation and joint control: trapezoidal velocity profiles,
//! the two-level stiffness schedule, Cartesian speed capping and PID.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    coriolis_matrix, gravity_torque, link_friction, mass_matrix, motor_friction, saturate, ArmState, Vec2,
};
use crate::error::{Error, Result, Violation};
use crate::kinematics::jacobian;
use crate::params::ArmParams;

/// Single-joint trapezoidal velocity profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidalProfile {
    pub q0: f64,
    pub qf: f64,
    /// Cruise speed actually reached, rad/s.
    pub v_max: f64,
    pub a_max: f64,
    pub t_acc: f64,
    pub t_coast: f64,
    pub t_dec: f64,
    pub t_total: f64,
}

fn check_range(q: f64, range: [f64; 2], what: &'static str) -> Result<()> {
    if !q.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if q < range[0] - 1e-12 || q > range[1] + 1e-12 {
        return Err(Error::OutOfRange { what, value: q, min: range[0], max: range[1] });
    }
    Ok(())
}

/// Minimum-time profile under speed and acceleration bounds. Falls back to
/// a triangular profile when the distance is too short to reach `v_max`.
pub fn plan_trapezoid(q0: f64, qf: f64, v_max: f64, a_max: f64, range: [f64; 2]) -> Result<TrapezoidalProfile> {
    check_range(q0, range, "start position")?;
    check_range(qf, range, "final position")?;
    let mut bad = Vec::new();
    if !(v_max.is_finite() && v_max > 0.0) {
        bad.push(Violation::new("v_max", "must be > 0"));
    }
    if !(a_max.is_finite() && a_max > 0.0) {
        bad.push(Violation::new("a_max", "must be > 0"));
    }
    if !bad.is_empty() {
        return Err(Error::Invalid(bad));
    }
    let d = (qf - q0).abs();
    if d == 0.0 {
        return Ok(TrapezoidalProfile {
            q0,
            qf,
            v_max: 0.0,
            a_max,
            t_acc: 0.0,
            t_coast: 0.0,
            t_dec: 0.0,
            t_total: 0.0,
        });
    }
    let (v, t_acc, t_coast) = if d < v_max * v_max / a_max {
        let v = (a_max * d).sqrt();
        (v, v / a_max, 0.0)
    } else {
        (v_max, v_max / a_max, d / v_max - v_max / a_max)
    };
    Ok(TrapezoidalProfile { q0, qf, v_max: v, a_max, t_acc, t_coast, t_dec: t_acc, t_total: 2.0 * t_acc + t_coast })
}

/// Symmetric profile with prescribed acceleration time and total duration.
pub fn plan_timed(q0: f64, qf: f64, t_acc: f64, t_total: f64, range: [f64; 2]) -> Result<TrapezoidalProfile> {
    check_range(q0, range, "start position")?;
    check_range(qf, range, "final position")?;
    if !(t_acc > 0.0 && t_total >= 2.0 * t_acc && t_total.is_finite()) {
        return Err(Error::Invalid(vec![Violation::new("t_acc", "need 0 < 2·t_acc <= t_total")]));
    }
    let d = (qf - q0).abs();
    let v = d / (t_total - t_acc);
    Ok(TrapezoidalProfile {
        q0,
        qf,
        v_max: v,
        a_max: v / t_acc,
        t_acc,
        t_coast: t_total - 2.0 * t_acc,
        t_dec: t_acc,
        t_total,
    })
}

impl TrapezoidalProfile {
    /// Desired (position, velocity, acceleration) at time `t`, clamped to
    /// the plan interval.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let s = (self.qf - self.q0).signum();
        if t < 0.0 || self.t_total == 0.0 {
            return (self.q0, 0.0, 0.0);
        }
        if t >= self.t_total {
            return (self.qf, 0.0, 0.0);
        }
        let a = self.a_max;
        if t < self.t_acc {
            (self.q0 + s * 0.5 * a * t * t, s * a * t, s * a)
        } else if t < self.t_acc + self.t_coast {
            let q = 0.5 * a * self.t_acc * self.t_acc + self.v_max * (t - self.t_acc);
            (self.q0 + s * q, s * self.v_max, 0.0)
        } else {
            let tau = self.t_total - t;
            (self.qf - s * 0.5 * a * tau * tau, s * a * tau, -s * a)
        }
    }

    /// Same path traversed `factor` times slower.
    pub fn time_scaled(&self, factor: f64) -> Self {
        Self {
            v_max: self.v_max / factor,
            a_max: self.a_max / (factor * factor),
            t_acc: self.t_acc * factor,
            t_coast: self.t_coast * factor,
            t_dec: self.t_dec * factor,
            t_total: self.t_total * factor,
            ..*self
        }
    }
}

/// Synchronised two-joint reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointPlan(pub [TrapezoidalProfile; 2]);

impl JointPlan {
    /// Stretch the shorter profile (keeping its acceleration-time fraction)
    /// so both joints start and stop together.
    pub fn synchronized(a: TrapezoidalProfile, b: TrapezoidalProfile) -> Self {
        let t = a.t_total.max(b.t_total);
        let stretch = |p: TrapezoidalProfile| {
            if p.t_total == 0.0 || p.t_total == t {
                return p;
            }
            let t_acc = p.t_acc * t / p.t_total;
            let v = (p.qf - p.q0).abs() / (t - t_acc);
            TrapezoidalProfile {
                v_max: v,
                a_max: v / t_acc,
                t_acc,
                t_coast: t - 2.0 * t_acc,
                t_dec: t_acc,
                t_total: t,
                ..p
            }
        };
        Self([stretch(a), stretch(b)])
    }

    pub fn duration(&self) -> f64 {
        self.0[0].t_total.max(self.0[1].t_total)
    }

    pub fn sample(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        let (a, b) = (self.0[0].sample(t), self.0[1].sample(t));
        (Vec2::new(a.0, b.0), Vec2::new(a.1, b.1), Vec2::new(a.2, b.2))
    }

    pub fn time_scaled(&self, factor: f64) -> Self {
        Self(self.0.map(|p| p.time_scaled(factor)))
    }

    /// Largest end-effector speed over a dense sampling of the plan, in the
    /// length unit of `l1`, `l2` per second.
    pub fn peak_tip_speed(&self, l1: f64, l2: f64, samples: usize) -> f64 {
        let t_end = self.duration();
        (0..=samples)
            .map(|i| {
                let t = t_end * i as f64 / samples as f64;
                let (q, qd, _) = self.sample(t);
                (jacobian(l1, l2, &q) * qd).norm()
            })
            .fold(0.0, f64::max)
    }
}

const CAP_SAMPLES: usize = 20_000;

/// Slow the plan uniformly until the tip speed stays under `cap_mps`.
/// Link lengths are in mm. Returns the plan and the applied factor (≥ 1).
pub fn cap_cartesian_speed(plan: &JointPlan, l1: f64, l2: f64, cap_mps: f64) -> (JointPlan, f64) {
    let peak = plan.peak_tip_speed(l1, l2, CAP_SAMPLES) / 1000.0;
    if peak <= cap_mps {
        return (*plan, 1.0);
    }
    // Small margin for peaks falling between samples.
    let factor = peak / cap_mps * (1.0 + 1e-6);
    (plan.time_scaled(factor), factor)
}

/// Two-level stiffness plan: high in the outer halves of the acceleration
/// and deceleration phases (and at rest), low in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessSchedule {
    pub k_high: f64,
    pub k_low: f64,
    pub t_acc: f64,
    pub t_dec: f64,
    pub t_total: f64,
}

impl StiffnessSchedule {
    pub fn for_profile(k_high: f64, k_low: f64, p: &TrapezoidalProfile) -> Self {
        Self { k_high, k_low, t_acc: p.t_acc, t_dec: p.t_dec, t_total: p.t_total }
    }

    pub fn stiffness_at(&self, t: f64) -> f64 {
        if t <= 0.5 * self.t_acc || t >= self.t_total - 0.5 * self.t_dec {
            self.k_high
        } else {
            self.k_low
        }
    }
}

/// Which coordinate the PID loop closes on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSide {
    /// Motor angle φ, tracking θ_d shifted by the expected spring deflection.
    #[default]
    Motor,
    /// Link angle θ.
    Link,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: [f64; 2],
    pub ki: [f64; 2],
    pub kd: [f64; 2],
    /// Bound on the integral contribution ki·∫e, N·m.
    pub integral_limit: f64,
    pub feedback: FeedbackSide,
    /// Add the model-based torque needed to follow the reference.
    pub feedforward: bool,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: [400.0, 200.0],
            ki: [200.0, 100.0],
            kd: [20.0, 8.0],
            integral_limit: 10.0,
            feedback: FeedbackSide::Motor,
            feedforward: true,
        }
    }
}

impl PidGains {
    pub fn zero() -> Self {
        Self { kp: [0.0; 2], ki: [0.0; 2], kd: [0.0; 2], feedforward: false, ..Self::default() }
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        for (name, g) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            for (i, x) in g.iter().enumerate() {
                if !(x.is_finite() && *x >= 0.0) {
                    v.push(Violation::new(format!("{prefix}.{name}[{i}]"), "must be >= 0"));
                }
            }
        }
        if !(self.integral_limit.is_finite() && self.integral_limit > 0.0) {
            v.push(Violation::new(format!("{prefix}.integral_limit"), "must be > 0"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    /// ∫e dt per joint, rad·s.
    pub integral: Vec2,
}

/// One PID update. The integral is clamped so that |ki·∫e| stays within
/// `integral_limit` and is frozen while the output saturates in the
/// direction of the error. The result is limited to ±`torque_max`.
#[allow(clippy::too_many_arguments)]
pub fn pid_step(
    g: &PidGains,
    st: &mut PidState,
    q_d: &Vec2,
    qdot_d: &Vec2,
    q: &Vec2,
    qdot: &Vec2,
    dt: f64,
    torque_max: f64,
) -> Vec2 {
    let mut tau = Vec2::zeros();
    for i in 0..2 {
        let e = q_d[i] - q[i];
        let ed = qdot_d[i] - qdot[i];
        let mut integral = st.integral[i] + e * dt;
        if g.ki[i] > 0.0 {
            let lim = g.integral_limit / g.ki[i];
            integral = integral.clamp(-lim, lim);
        }
        let unsat = g.kp[i] * e + g.ki[i] * integral + g.kd[i] * ed;
        if unsat.abs() > torque_max && unsat.signum() == e.signum() {
            // Hold the integral while pushing against the limit.
            integral = st.integral[i];
        }
        st.integral[i] = integral;
        tau[i] = (g.kp[i] * e + g.ki[i] * integral + g.kd[i] * ed).clamp(-torque_max, torque_max);
    }
    tau
}

/// PID (plus optional model feedforward) around a joint reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointController {
    pub gains: PidGains,
    pub pid: PidState,
}

impl JointController {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, pid: PidState::default() }
    }

    pub fn reset(&mut self) {
        self.pid = PidState::default();
    }

    /// Motor torque command for the link reference (q_d, qdot_d, qddot_d).
    pub fn torque(&mut self, p: &ArmParams, s: &ArmState, q_d: &Vec2, qdot_d: &Vec2, qddot_d: &Vec2, dt: f64) -> Vec2 {
        let g = &self.gains;
        // Link torque the spring has to deliver to follow the reference.
        let tau_link = if g.feedforward {
            mass_matrix(p, q_d) * qddot_d
                + coriolis_matrix(p, q_d, qdot_d) * qdot_d
                + gravity_torque(p, q_d)
                + link_friction(p, qdot_d)
        } else {
            gravity_torque(p, q_d)
        };
        let fb = match g.feedback {
            FeedbackSide::Motor => {
                let phi_d = q_d + tau_link.component_div(&s.stiffness);
                pid_step(g, &mut self.pid, &phi_d, qdot_d, &s.phi, &s.phi_dot, dt, p.torque_max)
            }
            FeedbackSide::Link => pid_step(g, &mut self.pid, q_d, qdot_d, &s.theta, &s.theta_dot, dt, p.torque_max),
        };
        let ff = if g.feedforward {
            tau_link + Vec2::from(p.motor_inertia).component_mul(qddot_d) + motor_friction(p, qdot_d)
        } else {
            tau_link
        };
        saturate(p, &(fb + ff)).0
    }
}
