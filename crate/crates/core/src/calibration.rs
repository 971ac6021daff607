//! Residual-threshold calibration from collision-free runs.
//!
//! The observer is given a deliberately wrong model (link masses scaled)
//! and the arm executes a fixed set of point-to-point moves spanning the
//! joint box at the rated joint speed. The largest residual seen sets the
//! threshold.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ArmState, Vec2};
use crate::error::{Result, Violation};
use crate::motion::{plan_trapezoid, JointController, JointPlan, PidGains, StiffnessSchedule};
use crate::observer::{calibrate_threshold, observer_step, Calibration, ObserverConfig, ObserverState};
use crate::params::ArmParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Factors applied to the observer's link masses, one run set each.
    pub mass_scale: Vec<f64>,
    /// Waypoints visited in order, deg.
    pub waypoints_deg: Vec<[f64; 2]>,
    /// Per-joint acceleration bound of the moves, deg/s².
    pub accel_deg_s2: [f64; 2],
    pub k_high: f64,
    pub k_low: f64,
    /// Rest time at each waypoint, s.
    pub dwell: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mass_scale: vec![0.9, 1.1],
            waypoints_deg: vec![[10.0, 90.0], [60.0, 20.0], [5.0, 120.0], [60.0, 120.0], [5.0, 10.0], [10.0, 90.0]],
            accel_deg_s2: [1800.0, 1800.0],
            k_high: 8000.0,
            k_low: 70.0,
            dwell: 0.3,
        }
    }
}

impl CalibrationConfig {
    pub fn violations(&self, prefix: &str, arm: &ArmParams) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.mass_scale.is_empty() {
            v.push(Violation::new(format!("{prefix}.mass_scale"), "must not be empty"));
        }
        for (i, m) in self.mass_scale.iter().enumerate() {
            if !(m.is_finite() && *m > 0.0) {
                v.push(Violation::new(format!("{prefix}.mass_scale[{i}]"), "must be > 0"));
            }
        }
        if self.waypoints_deg.len() < 2 {
            v.push(Violation::new(format!("{prefix}.waypoints_deg"), "need at least two waypoints"));
        }
        let lim = arm.joint_limits();
        for (i, w) in self.waypoints_deg.iter().enumerate() {
            if !lim.contains(&deg(w), 1e-12) {
                v.push(Violation::new(format!("{prefix}.waypoints_deg[{i}]"), "outside the joint limits"));
            }
        }
        for (i, a) in self.accel_deg_s2.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0) {
                v.push(Violation::new(format!("{prefix}.accel_deg_s2[{i}]"), "must be > 0"));
            }
        }
        if !(self.dwell.is_finite() && self.dwell >= 0.0) {
            v.push(Violation::new(format!("{prefix}.dwell"), "must be >= 0"));
        }
        v
    }
}

fn deg(w: &[f64; 2]) -> Vec2 {
    Vec2::new(w[0].to_radians(), w[1].to_radians())
}

/// Observer model with the link masses scaled by `factor`.
pub fn mismatched(arm: &ArmParams, factor: f64) -> ArmParams {
    let mut m = *arm;
    m.link_mass = arm.link_mass.map(|x| x * factor);
    m
}

/// Residual trace of one full waypoint tour with the observer running on
/// `model` while the plant uses `arm`.
pub fn collision_free_trace(
    arm: &ArmParams,
    model: &ArmParams,
    obs_cfg: &ObserverConfig,
    gains: &PidGains,
    cal: &CalibrationConfig,
) -> Result<Vec<Vec2>> {
    let dt = obs_cfg.dt;
    let lim = arm.joint_limits();
    let mut s = ArmState::at_rest(deg(&cal.waypoints_deg[0]), cal.k_high);
    let mut obs = ObserverState::new(model, &s);
    let mut ctrl = JointController::new(*gains);
    let mut trace = Vec::new();
    for pair in cal.waypoints_deg.windows(2) {
        let (a, b) = (deg(&pair[0]), deg(&pair[1]));
        let leg = |i: usize| {
            plan_trapezoid(a[i], b[i], arm.speed_max, cal.accel_deg_s2[i].to_radians(), [lim.min[i], lim.max[i]])
        };
        let plan = JointPlan::synchronized(leg(0)?, leg(1)?);
        let schedule = StiffnessSchedule::for_profile(cal.k_high, cal.k_low, &plan.0[0]);
        let t0 = s.t;
        let n = ((plan.duration() + cal.dwell) / dt).round() as usize;
        for _ in 0..n {
            let tl = s.t - t0;
            let (q, qd, qdd) = plan.sample(tl);
            s.set_stiffness_target(arm, Vec2::repeat(schedule.stiffness_at(tl)));
            let tau = ctrl.torque(arm, &s, &q, &qd, &qdd, dt);
            let (next, rep) = step(arm, &s, &tau, &Vec2::zeros(), dt)?;
            s = next;
            obs = observer_step(obs_cfg, &obs, model, &s, &rep.tau_applied)?;
            trace.push(obs.r);
        }
    }
    Ok(trace)
}

/// Run the tour once per mass scale and derive the threshold.
pub fn calibrate(
    arm: &ArmParams,
    obs_cfg: &ObserverConfig,
    gains: &PidGains,
    cal: &CalibrationConfig,
) -> Result<Calibration> {
    let traces = cal
        .mass_scale
        .iter()
        .map(|&f| collision_free_trace(arm, &mismatched(arm, f), obs_cfg, gains, cal))
        .collect::<Result<Vec<_>>>()?;
    let cal = calibrate_threshold(obs_cfg, &traces)?;
    Ok(if obs_cfg.shared_threshold { cal.shared() } else { cal })
}
