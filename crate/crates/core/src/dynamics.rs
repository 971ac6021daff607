//! Elastic-joint equations of motion for the two-link arm.
//!
//! Link side:  M1(θ)θ̈ + C(θ,θ̇)θ̇ + g(θ) + K(θ−φ) + F_l(θ̇) = τ_ext
//! Motor side: M2φ̈ + K(φ−θ) + F_m(φ̇) = τ_m
//!
//! Joint convention: θ1 is measured from the base +y axis, positive
//! clockwise (toward +x); θ2 is measured relative to link 1, positive
//! counter-clockwise. The in-plane gravity component g0·sin(tilt) points
//! along −y.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::params::ArmParams;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Full simulator state of the arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    /// Link angles, rad.
    pub theta: Vec2,
    pub theta_dot: Vec2,
    /// Motor angles, rad.
    pub phi: Vec2,
    pub phi_dot: Vec2,
    /// Current joint stiffness, N·m/rad.
    pub stiffness: Vec2,
    /// Commanded joint stiffness, N·m/rad.
    pub stiffness_target: Vec2,
    /// Simulation time, s.
    pub t: f64,
}

impl ArmState {
    /// Arm at rest with the motors aligned to the links (no deflection).
    pub fn at_rest(theta: Vec2, stiffness: f64) -> Self {
        Self {
            theta,
            theta_dot: Vec2::zeros(),
            phi: theta,
            phi_dot: Vec2::zeros(),
            stiffness: Vec2::repeat(stiffness),
            stiffness_target: Vec2::repeat(stiffness),
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.theta, self.theta_dot, self.phi, self.phi_dot, self.stiffness, self.stiffness_target]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.t.is_finite()
    }

    /// Transmission deflection θ − φ.
    pub fn deflection(&self) -> Vec2 {
        self.theta - self.phi
    }

    /// Torque transmitted by the elastic elements onto the links, K(φ − θ).
    pub fn spring_torque(&self) -> Vec2 {
        self.stiffness.component_mul(&(self.phi - self.theta))
    }

    pub fn set_stiffness_target(&mut self, params: &ArmParams, k: Vec2) {
        self.stiffness_target = k.map(|k| params.clamp_stiffness(k));
    }
}

/// Link-side inertia matrix M1(θ).
pub fn mass_matrix(p: &ArmParams, theta: &Vec2) -> Mat2 {
    let [l1, _] = p.link_length;
    let [m1, m2] = p.link_mass;
    let [c1, c2] = p.com_offset;
    let [i1, i2] = p.link_inertia;
    let cos2 = theta[1].cos();
    let m22 = i2 + m2 * c2 * c2;
    let m11 = i1 + m1 * c1 * c1 + m22 + m2 * (l1 * l1 + 2.0 * l1 * c2 * cos2);
    let m12 = -(m22 + m2 * l1 * c2 * cos2);
    Mat2::new(m11, m12, m12, m22)
}

/// Motor-side inertia matrix M2 = diag(J1, J2).
pub fn motor_mass_matrix(p: &ArmParams) -> Mat2 {
    Mat2::from_diagonal(&Vec2::from(p.motor_inertia))
}

/// Christoffel-form Coriolis/centrifugal matrix, so the torque is C·θ̇ and
/// Ṁ1 − 2C is skew-symmetric.
pub fn coriolis_matrix(p: &ArmParams, theta: &Vec2, theta_dot: &Vec2) -> Mat2 {
    let s = p.link_mass[1] * p.link_length[0] * p.com_offset[1] * theta[1].sin();
    let (w1, w2) = (theta_dot[0], theta_dot[1]);
    Mat2::new(-s * w2, s * (w2 - w1), s * w1, 0.0)
}

/// In-plane gravity component for the tilted operating plane.
fn plane_gravity(p: &ArmParams) -> f64 {
    p.gravity * p.plane_tilt.sin()
}

pub fn gravity_torque(p: &ArmParams, theta: &Vec2) -> Vec2 {
    let g = plane_gravity(p);
    let [l1, _] = p.link_length;
    let [m1, m2] = p.link_mass;
    let [c1, c2] = p.com_offset;
    let (s1, s12) = (theta[0].sin(), (theta[0] - theta[1]).sin());
    Vec2::new(-g * ((m1 * c1 + m2 * l1) * s1 + m2 * c2 * s12), g * m2 * c2 * s12)
}

/// Gravitational potential in the tilted plane, zero with both links along +y.
pub fn gravity_potential(p: &ArmParams, theta: &Vec2) -> f64 {
    let g = plane_gravity(p);
    let [l1, _] = p.link_length;
    let [m1, m2] = p.link_mass;
    let [c1, c2] = p.com_offset;
    let height = (m1 * c1 + m2 * l1) * (theta[0].cos() - 1.0) + m2 * c2 * ((theta[0] - theta[1]).cos() - 1.0);
    g * height
}

pub fn link_friction(p: &ArmParams, theta_dot: &Vec2) -> Vec2 {
    Vec2::from(p.link_damping).component_mul(theta_dot)
}

pub fn motor_friction(p: &ArmParams, phi_dot: &Vec2) -> Vec2 {
    Vec2::from(p.motor_damping).component_mul(phi_dot)
}

/// Torque of the unilateral end-stop spring-damper, plus which stops are engaged.
pub fn limit_torque(p: &ArmParams, theta: &Vec2, theta_dot: &Vec2) -> (Vec2, [bool; 2]) {
    let mut tau = Vec2::zeros();
    let mut hit = [false; 2];
    for i in 0..2 {
        if theta[i] < p.joint_min[i] {
            let t = p.limit_stiffness * (p.joint_min[i] - theta[i]) - p.limit_damping * theta_dot[i];
            tau[i] = t.max(0.0);
            hit[i] = true;
        } else if theta[i] > p.joint_max[i] {
            let t = -p.limit_stiffness * (theta[i] - p.joint_max[i]) - p.limit_damping * theta_dot[i];
            tau[i] = t.min(0.0);
            hit[i] = true;
        }
    }
    (tau, hit)
}

fn limit_potential(p: &ArmParams, theta: &Vec2) -> f64 {
    (0..2)
        .map(|i| {
            let pen = (p.joint_min[i] - theta[i]).max(0.0) + (theta[i] - p.joint_max[i]).max(0.0);
            0.5 * p.limit_stiffness * pen * pen
        })
        .sum()
}

/// Clamp a motor torque command to ±torque_max.
pub fn saturate(p: &ArmParams, tau: &Vec2) -> (Vec2, bool) {
    let sat = tau.map(|t| t.clamp(-p.torque_max, p.torque_max));
    (sat, sat != *tau)
}

/// Joints held fixed by an external clamp (link and motor side together).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JointLock(pub [bool; 2]);

impl JointLock {
    pub const NONE: Self = Self([false, false]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accel {
    pub theta_ddot: Vec2,
    pub phi_ddot: Vec2,
    /// Motor torque after saturation.
    pub tau_applied: Vec2,
    pub saturated: bool,
    pub limit_hit: [bool; 2],
}

/// Solve both equations of motion for the accelerations.
///
/// The motor torque is saturated internally; `tau_ext` is the external
/// torque acting on the links (e.g. Jᵀ·F from a contact).
pub fn forward_dynamics(p: &ArmParams, s: &ArmState, tau_m: &Vec2, tau_ext: &Vec2) -> Result<Accel> {
    forward_dynamics_locked(p, s, tau_m, tau_ext, JointLock::NONE)
}

pub fn forward_dynamics_locked(
    p: &ArmParams,
    s: &ArmState,
    tau_m: &Vec2,
    tau_ext: &Vec2,
    lock: JointLock,
) -> Result<Accel> {
    if !s.is_finite() {
        return Err(Error::NonFinite("arm state"));
    }
    if !(tau_m.iter().chain(tau_ext.iter()).all(|v| v.is_finite())) {
        return Err(Error::NonFinite("torque input"));
    }
    let (tau_applied, saturated) = saturate(p, tau_m);
    let (tau_lim, limit_hit) = limit_torque(p, &s.theta, &s.theta_dot);
    let spring = s.spring_torque();

    let m1 = mass_matrix(p, &s.theta);
    let c = coriolis_matrix(p, &s.theta, &s.theta_dot);
    let link_rhs =
        tau_ext + tau_lim + spring - c * s.theta_dot - gravity_torque(p, &s.theta) - link_friction(p, &s.theta_dot);
    let motor_rhs = tau_applied - spring - motor_friction(p, &s.phi_dot);

    let mut theta_ddot = match lock.0 {
        [false, false] => solve2(&m1, &link_rhs),
        [true, false] => Vec2::new(0.0, link_rhs[1] / m1[(1, 1)]),
        [false, true] => Vec2::new(link_rhs[0] / m1[(0, 0)], 0.0),
        [true, true] => Vec2::zeros(),
    };
    let mut phi_ddot = motor_rhs.component_div(&Vec2::from(p.motor_inertia));
    for i in 0..2 {
        if lock.0[i] {
            theta_ddot[i] = 0.0;
            phi_ddot[i] = 0.0;
        }
    }
    Ok(Accel { theta_ddot, phi_ddot, tau_applied, saturated, limit_hit })
}

/// 2×2 SPD solve by Cramer's rule.
fn solve2(m: &Mat2, b: &Vec2) -> Vec2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vec2::new((m[(1, 1)] * b[0] - m[(0, 1)] * b[1]) / det, (m[(0, 0)] * b[1] - m[(1, 0)] * b[0]) / det)
}

/// Flags raised at any RK4 stage of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    /// Motor torque actually applied (after saturation), held over the step.
    pub tau_applied: Vec2,
    pub saturated: bool,
    pub limit_hit: [bool; 2],
}

#[derive(Clone, Copy)]
struct Deriv {
    theta: Vec2,
    theta_dot: Vec2,
    phi: Vec2,
    phi_dot: Vec2,
}

fn advance(s: &ArmState, d: &Deriv, h: f64) -> ArmState {
    ArmState {
        theta: s.theta + d.theta * h,
        theta_dot: s.theta_dot + d.theta_dot * h,
        phi: s.phi + d.phi * h,
        phi_dot: s.phi_dot + d.phi_dot * h,
        ..*s
    }
}

/// One fixed step with constant torques (zero-order hold).
pub fn step(p: &ArmParams, s: &ArmState, tau_m: &Vec2, tau_ext: &Vec2, dt: f64) -> Result<(ArmState, StepReport)> {
    step_with(p, s, tau_m, dt, JointLock::NONE, |_| *tau_ext)
}

/// One classical RK4 step. The external torque may depend on the stage
/// state (contact models); stiffness is held over the step and then
/// ramped toward its target.
pub fn step_with<F>(
    p: &ArmParams,
    s: &ArmState,
    tau_m: &Vec2,
    dt: f64,
    lock: JointLock,
    mut tau_ext: F,
) -> Result<(ArmState, StepReport)>
where
    F: FnMut(&ArmState) -> Vec2,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonFinite("time step"));
    }
    let mut report = StepReport::default();
    let mut eval = |st: &ArmState| -> Result<Deriv> {
        let a = forward_dynamics_locked(p, st, tau_m, &tau_ext(st), lock)?;
        report.tau_applied = a.tau_applied;
        report.saturated |= a.saturated;
        report.limit_hit[0] |= a.limit_hit[0];
        report.limit_hit[1] |= a.limit_hit[1];
        Ok(Deriv { theta: st.theta_dot, theta_dot: a.theta_ddot, phi: st.phi_dot, phi_dot: a.phi_ddot })
    };
    let k1 = eval(s)?;
    let k2 = eval(&advance(s, &k1, 0.5 * dt))?;
    let k3 = eval(&advance(s, &k2, 0.5 * dt))?;
    let k4 = eval(&advance(s, &k3, dt))?;
    let combine = |f: fn(&Deriv) -> Vec2| (f(&k1) + 2.0 * f(&k2) + 2.0 * f(&k3) + f(&k4)) * (dt / 6.0);
    let mut next = ArmState {
        theta: s.theta + combine(|d| d.theta),
        theta_dot: s.theta_dot + combine(|d| d.theta_dot),
        phi: s.phi + combine(|d| d.phi),
        phi_dot: s.phi_dot + combine(|d| d.phi_dot),
        t: s.t + dt,
        ..*s
    };
    for i in 0..2 {
        if lock.0[i] {
            next.theta_dot[i] = 0.0;
            next.phi_dot[i] = 0.0;
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFinite("integrated state"));
    }
    Ok((update_stiffness(p, &next, dt), report))
}

/// Move the stiffness toward its target along a linear ramp at the
/// actuator's full-range rate, stopping exactly at the target.
pub fn update_stiffness(p: &ArmParams, s: &ArmState, dt: f64) -> ArmState {
    let max_delta = p.stiffness_rate() * dt;
    let mut out = *s;
    for i in 0..2 {
        let target = p.clamp_stiffness(s.stiffness_target[i]);
        let delta = (target - s.stiffness[i]).clamp(-max_delta, max_delta);
        out.stiffness[i] = p.clamp_stiffness(s.stiffness[i] + delta);
        out.stiffness_target[i] = target;
    }
    out
}

pub fn kinetic_energy(p: &ArmParams, s: &ArmState) -> f64 {
    let link = 0.5 * s.theta_dot.dot(&(mass_matrix(p, &s.theta) * s.theta_dot));
    let motor = 0.5 * s.phi_dot.dot(&(motor_mass_matrix(p) * s.phi_dot));
    link + motor
}

pub fn elastic_energy(s: &ArmState) -> f64 {
    let d = s.deflection();
    0.5 * d.dot(&s.stiffness.component_mul(&d))
}

/// Kinetic + elastic + gravitational (+ end-stop) energy, J.
pub fn total_energy(p: &ArmParams, s: &ArmState) -> f64 {
    kinetic_energy(p, s) + elastic_energy(s) + gravity_potential(p, &s.theta) + limit_potential(p, &s.theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mid() -> Vec2 {
        Vec2::new(0.5, 1.2)
    }

    #[test]
    fn mass_matrix_spd() {
        let p = ArmParams::preset();
        for q2 in [0.0, 0.7, 1.5, 2.2, 3.1] {
            let m = mass_matrix(&p, &Vec2::new(0.3, q2));
            assert_eq!(m[(0, 1)], m[(1, 0)]);
            let eig = m.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > 0.0), "{eig:?}");
        }
    }

    #[test]
    fn mass_matrix_shrinks_as_elbow_folds() {
        let p = ArmParams::preset();
        let m0 = mass_matrix(&p, &Vec2::new(0.0, 0.0));
        let m90 = mass_matrix(&p, &Vec2::new(0.0, std::f64::consts::FRAC_PI_2));
        assert!(m90[(0, 0)] < m0[(0, 0)]);
    }

    #[test]
    fn coriolis_vanishes_at_rest_and_is_linear() {
        let p = ArmParams::preset();
        assert_eq!(coriolis_matrix(&p, &mid(), &Vec2::zeros()), Mat2::zeros());
        let w = Vec2::new(0.4, -1.3);
        let c1 = coriolis_matrix(&p, &mid(), &w);
        let c2 = coriolis_matrix(&p, &mid(), &(2.0 * w));
        assert_relative_eq!(c2, 2.0 * c1, epsilon = 1e-15);
    }

    #[test]
    fn gravity_zero_on_flat_plane() {
        let p = ArmParams::preset();
        assert_eq!(gravity_torque(&p, &mid()), Vec2::zeros());
    }

    #[test]
    fn gravity_zero_when_links_align_with_it() {
        let mut p = ArmParams::preset();
        p.plane_tilt = std::f64::consts::FRAC_PI_2;
        let g = gravity_torque(&p, &Vec2::zeros());
        assert!(g.norm() < 1e-12);
        let g = gravity_torque(&p, &Vec2::new(std::f64::consts::PI, 0.0));
        assert!(g.norm() < 1e-9);
    }

    #[test]
    fn equilibrium_has_zero_acceleration() {
        let p = ArmParams::preset();
        let s = ArmState::at_rest(mid(), 500.0);
        let a = forward_dynamics(&p, &s, &Vec2::zeros(), &Vec2::zeros()).unwrap();
        assert_eq!(a.theta_ddot, Vec2::zeros());
        assert_eq!(a.phi_ddot, Vec2::zeros());
    }

    #[test]
    fn pure_spring_torque() {
        let p = ArmParams::preset().frictionless();
        let mut s = ArmState::at_rest(mid(), 1000.0);
        s.theta[0] += 0.1;
        let a = forward_dynamics(&p, &s, &Vec2::zeros(), &Vec2::zeros()).unwrap();
        assert_relative_eq!(a.phi_ddot[0], 1000.0 * 0.1 / p.motor_inertia[0], max_relative = 1e-12);
        assert_eq!(a.phi_ddot[1], 0.0);
        let expect = mass_matrix(&p, &s.theta).try_inverse().unwrap() * Vec2::new(-100.0, 0.0);
        assert_relative_eq!(a.theta_ddot, expect, max_relative = 1e-12);
    }

    #[test]
    fn torque_saturation_flagged() {
        let p = ArmParams::preset();
        let s = ArmState::at_rest(mid(), 500.0);
        let a = forward_dynamics(&p, &s, &Vec2::new(50.0, -10.0), &Vec2::zeros()).unwrap();
        assert!(a.saturated);
        assert_eq!(a.tau_applied, Vec2::new(35.0, -10.0));
        let a = forward_dynamics(&p, &s, &Vec2::new(5.0, -10.0), &Vec2::zeros()).unwrap();
        assert!(!a.saturated);
    }

    #[test]
    fn non_finite_rejected() {
        let p = ArmParams::preset();
        let mut s = ArmState::at_rest(mid(), 500.0);
        s.theta_dot[1] = f64::NAN;
        assert!(forward_dynamics(&p, &s, &Vec2::zeros(), &Vec2::zeros()).is_err());
        assert!(step(&p, &s, &Vec2::zeros(), &Vec2::zeros(), 1e-3).is_err());
    }

    #[test]
    fn step_at_equilibrium_only_advances_time() {
        let p = ArmParams::preset();
        let s = ArmState::at_rest(mid(), 500.0);
        let (n, r) = step(&p, &s, &Vec2::zeros(), &Vec2::zeros(), 1e-3).unwrap();
        assert_eq!(n.theta, s.theta);
        assert_eq!(n.phi, s.phi);
        assert_eq!(n.t, 1e-3);
        assert!(!r.saturated && r.limit_hit == [false; 2]);
    }

    #[test]
    fn end_stop_engages_outside_range() {
        let p = ArmParams::preset();
        let (tau, hit) = limit_torque(&p, &Vec2::new(-0.01, 1.0), &Vec2::zeros());
        assert!(hit[0] && !hit[1]);
        assert!(tau[0] > 0.0 && tau[1] == 0.0);
        let (tau, hit) = limit_torque(&p, &Vec2::new(0.3, 2.3), &Vec2::zeros());
        assert!(hit[1] && tau[1] < 0.0);
    }

    #[test]
    fn stiffness_ramp_full_range() {
        let p = ArmParams::preset();
        let mut s = ArmState::at_rest(mid(), 70.0);
        s.stiffness_target = Vec2::repeat(8000.0);
        let mut steps = 0;
        while s.stiffness[0] < 8000.0 {
            s = update_stiffness(&p, &s, 1e-3);
            steps += 1;
            assert!(steps < 1000);
        }
        assert!((449..=451).contains(&steps), "{steps}");
    }

    #[test]
    fn stiffness_ramp_half_range() {
        let p = ArmParams::preset();
        let mut s = ArmState::at_rest(mid(), 70.0);
        s.stiffness_target = Vec2::repeat(4035.0);
        let mut steps = 0;
        while s.stiffness[0] < 4035.0 {
            s = update_stiffness(&p, &s, 1e-3);
            steps += 1;
        }
        assert!((224..=226).contains(&steps), "{steps}");
        let again = update_stiffness(&p, &s, 1e-3);
        assert_eq!(again.stiffness, s.stiffness);
    }

    #[test]
    fn energy_terms() {
        let p = ArmParams::preset();
        let s = ArmState::at_rest(mid(), 1000.0);
        assert_eq!(total_energy(&p, &s), 0.0);
        let mut d = s;
        d.theta[0] += 0.1;
        assert_relative_eq!(total_energy(&p, &d), 5.0, max_relative = 1e-12);
    }
}
