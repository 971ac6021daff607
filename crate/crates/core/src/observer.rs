//! Generalized-momentum collision observer.
//!
//! With p = M1(θ)θ̇ + M2φ̇ the internal spring torques cancel and
//! ṗ = τ_m − F_l − F_m − β(θ, θ̇) + τ_ext, β = g(θ) − Cᵀ(θ, θ̇)θ̇.
//! The residual r = K_O(p − p0 − ∫(τ_m − F − β + r)) is a first-order
//! low-pass estimate of τ_ext.

use serde::{Deserialize, Serialize};

use crate::dynamics::{coriolis_matrix, gravity_torque, link_friction, mass_matrix, motor_friction, ArmState, Vec2};
use crate::error::{Error, Result, Violation};
use crate::params::ArmParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    /// Diagonal observer gain, 1/s.
    pub gain: [f64; 2],
    /// Threshold margin ε_c, N·m.
    pub margin: f64,
    /// Observer step, s.
    pub dt: f64,
    /// Use the larger joint threshold for both joints.
    pub shared_threshold: bool,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { gain: [50.0, 50.0], margin: 1.0, dt: 1e-3, shared_threshold: true }
    }
}

impl ObserverConfig {
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        for (i, k) in self.gain.iter().enumerate() {
            if !(k.is_finite() && *k > 0.0) {
                v.push(Violation::new(format!("{prefix}.gain[{i}]"), "must be a positive number"));
            }
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            v.push(Violation::new(format!("{prefix}.margin"), "must be >= 0"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            v.push(Violation::new(format!("{prefix}.dt"), "must be > 0"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub time: f64,
    pub joint_index: usize,
    pub residual_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    /// Residual, N·m.
    pub r: Vec2,
    /// ∫(τ_m − F − β + r) dt, N·m·s.
    pub integral_acc: Vec2,
    /// Momentum at initialisation, N·m·s.
    pub p0: Vec2,
    /// Detection threshold; `None` until calibrated.
    pub epsilon_r: Option<Vec2>,
    pub r_hat_max: Option<Vec2>,
    /// Time of the last update, s.
    pub t: f64,
    /// β at the last sample (trapezoid left end).
    beta_prev: Vec2,
    /// Link and motor angles at the last sample.
    theta_prev: Vec2,
    phi_prev: Vec2,
    latched: Option<DetectionEvent>,
}

/// Generalized momentum M1(θ)θ̇ + M2φ̇.
pub fn momentum(p: &ArmParams, s: &ArmState) -> Vec2 {
    mass_matrix(p, &s.theta) * s.theta_dot + Vec2::from(p.motor_inertia).component_mul(&s.phi_dot)
}

/// β(θ, θ̇) = g(θ) − Cᵀ(θ, θ̇)θ̇.
pub fn beta(p: &ArmParams, theta: &Vec2, theta_dot: &Vec2) -> Vec2 {
    gravity_torque(p, theta) - coriolis_matrix(p, theta, theta_dot).transpose() * theta_dot
}

/// ∫(F_l + F_m) dt over a sample interval. Viscous friction is the time
/// derivative of D·q, so its integral follows exactly from the increments.
fn friction_impulse(p: &ArmParams, d_theta: &Vec2, d_phi: &Vec2) -> Vec2 {
    link_friction(p, d_theta) + motor_friction(p, d_phi)
}

impl ObserverState {
    /// Start the observer on `s`; the residual is zero by construction.
    pub fn new(p: &ArmParams, s: &ArmState) -> Self {
        Self {
            r: Vec2::zeros(),
            integral_acc: Vec2::zeros(),
            p0: momentum(p, s),
            epsilon_r: None,
            r_hat_max: None,
            t: s.t,
            beta_prev: beta(p, &s.theta, &s.theta_dot),
            theta_prev: s.theta,
            phi_prev: s.phi,
            latched: None,
        }
    }

    pub fn with_threshold(mut self, cal: Calibration) -> Self {
        self.r_hat_max = Some(cal.r_hat_max);
        self.epsilon_r = Some(cal.epsilon_r);
        self
    }

    /// Latched detection, if any.
    pub fn event(&self) -> Option<DetectionEvent> {
        self.latched
    }

    pub fn reset_latch(&mut self) {
        self.latched = None;
    }

    /// Restart the integration from `s` while keeping the calibration.
    pub fn rebase(&mut self, p: &ArmParams, s: &ArmState) {
        let fresh = Self::new(p, s);
        *self = Self { epsilon_r: self.epsilon_r, r_hat_max: self.r_hat_max, ..fresh };
    }
}

/// Advance the observer by one sample.
///
/// `tau_applied` is the motor torque actually held over the last step. It is
/// integrated exactly (zero-order hold), as is the viscous friction; β and
/// the residual feedback term use the trapezoidal rule (implicit in r).
pub fn observer_step(
    cfg: &ObserverConfig,
    obs: &ObserverState,
    p: &ArmParams,
    s: &ArmState,
    tau_applied: &Vec2,
) -> Result<ObserverState> {
    if !s.is_finite() {
        return Err(Error::NonFinite("measured state"));
    }
    if !tau_applied.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("applied torque"));
    }
    let dt = cfg.dt;
    let b = beta(p, &s.theta, &s.theta_dot);
    let pm = momentum(p, s);
    let friction = friction_impulse(p, &(s.theta - obs.theta_prev), &(s.phi - obs.phi_prev));
    let base = obs.integral_acc + (tau_applied - 0.5 * (obs.beta_prev + b)) * dt - friction + obs.r * (0.5 * dt);
    let mut r = Vec2::zeros();
    for i in 0..2 {
        let k = cfg.gain[i];
        r[i] = k * (pm[i] - obs.p0[i] - base[i]) / (1.0 + 0.5 * k * dt);
    }
    let mut next = ObserverState {
        r,
        integral_acc: base + r * (0.5 * dt),
        t: s.t,
        beta_prev: b,
        theta_prev: s.theta,
        phi_prev: s.phi,
        ..*obs
    };
    if next.latched.is_none() {
        if let Some(eps) = next.epsilon_r {
            next.latched = crossing(&next.r, &eps, s.t);
        }
    }
    Ok(next)
}

fn crossing(r: &Vec2, eps: &Vec2, t: f64) -> Option<DetectionEvent> {
    // Ties go to the lower joint index.
    (0..2).find(|&i| r[i].abs() >= eps[i]).map(|i| DetectionEvent { time: t, joint_index: i, residual_value: r[i] })
}

/// Latched detection event. Errors if the threshold was never calibrated.
pub fn detect(obs: &ObserverState) -> Result<Option<DetectionEvent>> {
    match obs.epsilon_r {
        None => Err(Error::Uncalibrated),
        Some(_) => Ok(obs.latched),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub r_hat_max: Vec2,
    pub epsilon_r: Vec2,
}

impl Calibration {
    /// Result of `calibration::calibrate` with the default arm, gains,
    /// observer and tour, rounded to 0.01 N·m.
    pub fn committed() -> Self {
        Self { r_hat_max: Vec2::repeat(11.22), epsilon_r: Vec2::repeat(12.22) }
    }

    /// Both joints get the larger of the two thresholds.
    pub fn shared(self) -> Self {
        Self { r_hat_max: Vec2::repeat(self.r_hat_max.max()), epsilon_r: Vec2::repeat(self.epsilon_r.max()) }
    }
}

/// ε_r = max|r| over collision-free traces + ε_c, per joint.
pub fn calibrate_threshold(cfg: &ObserverConfig, traces: &[Vec<Vec2>]) -> Result<Calibration> {
    if traces.is_empty() {
        return Err(Error::Empty("collision-free traces"));
    }
    let mut r_hat_max = Vec2::zeros();
    for r in traces.iter().flatten() {
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("residual trace"));
        }
        r_hat_max = r_hat_max.sup(&r.abs());
    }
    Ok(Calibration { r_hat_max, epsilon_r: r_hat_max.add_scalar(cfg.margin) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step;

    #[test]
    fn momentum_at_rest_and_motor_only() {
        let p = ArmParams::preset();
        let mut s = ArmState::at_rest(Vec2::new(0.4, 1.0), 1000.0);
        assert_eq!(momentum(&p, &s), Vec2::zeros());
        s.phi_dot = Vec2::new(1.0, 0.0);
        assert_eq!(momentum(&p, &s), Vec2::new(p.motor_inertia[0], 0.0));
    }

    #[test]
    fn beta_static_cases() {
        let mut p = ArmParams::preset();
        let q = Vec2::new(0.3, 0.9);
        assert_eq!(beta(&p, &q, &Vec2::zeros()), Vec2::zeros());
        p.plane_tilt = 0.2;
        assert_eq!(beta(&p, &q, &Vec2::zeros()), gravity_torque(&p, &q));
    }

    #[test]
    fn threshold_arithmetic() {
        let cfg = ObserverConfig { margin: 1.0, ..Default::default() };
        let c = calibrate_threshold(&cfg, &[vec![Vec2::new(7.0, -3.0)], vec![Vec2::new(-2.0, 6.5)]]).unwrap();
        assert_eq!(c.r_hat_max, Vec2::new(7.0, 6.5));
        assert_eq!(c.epsilon_r, Vec2::new(8.0, 7.5));
        let cfg = ObserverConfig { margin: 0.5, ..Default::default() };
        let c = calibrate_threshold(&cfg, &[vec![Vec2::zeros(); 3]]).unwrap();
        assert_eq!(c.epsilon_r, Vec2::new(0.5, 0.5));
        assert!(matches!(calibrate_threshold(&cfg, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn detect_requires_calibration() {
        let p = ArmParams::preset();
        let obs = ObserverState::new(&p, &ArmState::at_rest(Vec2::new(0.3, 1.0), 70.0));
        assert!(matches!(detect(&obs), Err(Error::Uncalibrated)));
    }

    #[test]
    fn detection_latches_until_reset() {
        let p = ArmParams::preset();
        let cfg = ObserverConfig::default();
        let mut s = ArmState::at_rest(Vec2::new(0.5, 1.0), 2000.0);
        let cal = Calibration { r_hat_max: Vec2::repeat(1.0), epsilon_r: Vec2::repeat(2.0) };
        let mut obs = ObserverState::new(&p, &s).with_threshold(cal);
        let push = Vec2::new(0.0, 4.0);
        let mut first = None;
        for k in 0..400 {
            let ext = if k < 200 { push } else { Vec2::zeros() };
            let (n, rep) = step(&p, &s, &Vec2::zeros(), &ext, cfg.dt).unwrap();
            s = n;
            obs = observer_step(&cfg, &obs, &p, &s, &rep.tau_applied).unwrap();
            if first.is_none() {
                first = detect(&obs).unwrap();
            }
        }
        let ev = first.expect("push should be detected");
        assert_eq!(ev.joint_index, 1);
        assert!(ev.residual_value.abs() >= 2.0);
        // Residual has decayed but the event is still reported.
        assert!(obs.r.norm() < 2.0);
        assert_eq!(detect(&obs).unwrap(), Some(ev));
        obs.reset_latch();
        assert_eq!(detect(&obs).unwrap(), None);
    }
}
