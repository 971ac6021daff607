//! Post-collision reactions and the simulated soft-tissue stab test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    coriolis_matrix, gravity_torque, link_friction, mass_matrix, step_with, ArmState, JointLock, Vec2,
};
use crate::error::{Error, Result, Violation};
use crate::kinematics::{forward_kinematics, inverse_kinematics, jacobian, Elbow, JointLimits, PlanarPose};
use crate::motion::{JointController, PidGains};
use crate::observer::{observer_step, Calibration, ObserverConfig, ObserverState};
use crate::params::ArmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionStrategy {
    /// Motor torque forced to zero; stiffness frozen at its current value.
    ZeroTorque,
    /// Zero torque and the stiffness target dropped to its minimum.
    ZeroTorquePlusSoften,
}

/// Apply `strategy` to the arm at the detection instant. The returned state
/// carries the new stiffness target; the caller commands zero motor torque
/// from this tick on.
pub fn apply_reaction(strategy: ReactionStrategy, p: &ArmParams, s: &ArmState) -> ArmState {
    let mut out = *s;
    match strategy {
        ReactionStrategy::ZeroTorque => out.stiffness_target = s.stiffness,
        ReactionStrategy::ZeroTorquePlusSoften => out.stiffness_target = Vec2::repeat(p.stiffness_min),
    }
    out
}

/// Compression-only Kelvin–Voigt layer with a cutting threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactMedium {
    /// A point on the medium surface, mm.
    pub surface: PlanarPose,
    /// Unit approach direction pointing into the medium.
    pub direction: [f64; 2],
    /// Contact stiffness, N/m.
    pub k_c: f64,
    /// Contact damping, N·s/m.
    pub c_c: f64,
    /// Force at or above which the blade cuts, N.
    pub f_y: f64,
    /// Medium thickness, m. Deeper excursions are not counted.
    pub depth_limit: f64,
}

impl Default for ContactMedium {
    fn default() -> Self {
        Self {
            surface: PlanarPose::new(-23.62, 650.69),
            direction: [1.0, 0.0],
            k_c: 20_000.0,
            c_c: 40.0,
            // Output of `calibrate_cutting_force` with the default arm,
            // controller and committed observer threshold.
            f_y: 94.15,
            depth_limit: 0.05,
        }
    }
}

impl ContactMedium {
    pub fn dir(&self) -> Vec2 {
        Vec2::from(self.direction).normalize()
    }

    /// Indentation past the surface, m (negative outside).
    pub fn indentation(&self, ee_mm: &PlanarPose) -> f64 {
        (ee_mm.to_vec() - self.surface.to_vec()).dot(&self.dir()) / 1000.0
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        for (name, x) in [("k_c", self.k_c), ("c_c", self.c_c), ("f_y", self.f_y), ("depth_limit", self.depth_limit)] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be > 0"));
            }
        }
        let d = Vec2::from(self.direction);
        if !(d.iter().all(|x| x.is_finite()) && d.norm() > 0.0) {
            v.push(Violation::new(format!("{prefix}.direction"), "must be a non-zero vector"));
        }
        if !self.surface.is_finite() {
            v.push(Violation::new(format!("{prefix}.surface"), "must be finite"));
        }
        v
    }
}

/// Normal contact force magnitude, N, for indentation `delta` (m) and
/// indentation rate `delta_dot` (m/s). Zero outside the medium and never
/// adhesive.
pub fn contact_force(m: &ContactMedium, delta: f64, delta_dot: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    (m.k_c * delta + m.c_c * delta_dot).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabCase(pub u8);

impl StabCase {
    pub const ALL: [StabCase; 3] = [StabCase(1), StabCase(2), StabCase(3)];

    /// Pre-collision stiffness and reaction for the case.
    pub fn setup(self, k_low: f64, k_high: f64) -> Option<(f64, ReactionStrategy)> {
        match self.0 {
            1 => Some((k_low, ReactionStrategy::ZeroTorque)),
            2 => Some((k_high, ReactionStrategy::ZeroTorque)),
            3 => Some((k_high, ReactionStrategy::ZeroTorquePlusSoften)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabConfig {
    pub velocities_mps: Vec<f64>,
    pub cases: Vec<u8>,
    /// Free travel before the surface at the start of a run, mm.
    pub run_up_mm: f64,
    /// How far past the surface the reference continues, mm.
    pub overtravel_mm: f64,
    /// Simulated time kept after detection, s.
    pub after_detection_s: f64,
    pub k_low: f64,
    pub k_high: f64,
    /// Velocity at which case 1 must not cut (medium calibration anchor), m/s.
    pub anchor_mps: f64,
}

impl Default for StabConfig {
    fn default() -> Self {
        Self {
            velocities_mps: vec![0.2, 0.3, 0.4, 0.48, 0.6, 0.8],
            cases: vec![1, 2, 3],
            run_up_mm: 20.0,
            overtravel_mm: 30.0,
            after_detection_s: 0.3,
            k_low: 70.0,
            k_high: 8000.0,
            anchor_mps: 0.48,
        }
    }
}

impl StabConfig {
    pub fn case_list(&self) -> Vec<StabCase> {
        self.cases.iter().map(|&c| StabCase(c)).collect()
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.velocities_mps.is_empty() {
            v.push(Violation::new(format!("{prefix}.velocities_mps"), "must not be empty"));
        }
        for (i, x) in self.velocities_mps.iter().enumerate() {
            if !(x.is_finite() && *x > 0.0) {
                v.push(Violation::new(format!("{prefix}.velocities_mps[{i}]"), "must be > 0"));
            }
        }
        if self.cases.is_empty() {
            v.push(Violation::new(format!("{prefix}.cases"), "must not be empty"));
        }
        for (i, c) in self.cases.iter().enumerate() {
            if !(1..=3).contains(c) {
                v.push(Violation::new(format!("{prefix}.cases[{i}]"), "must be 1, 2 or 3"));
            }
        }
        for (name, x) in [
            ("run_up_mm", self.run_up_mm),
            ("overtravel_mm", self.overtravel_mm),
            ("after_detection_s", self.after_detection_s),
            ("anchor_mps", self.anchor_mps),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be > 0"));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabResult {
    pub case_id: u8,
    pub velocity_mps: f64,
    /// Peak contact force, N.
    pub f_p: f64,
    /// Maximum indentation while the force was at or above the cutting level, mm.
    pub d_p: f64,
    pub detected_at: Option<f64>,
    /// Time of the peak contact force, s.
    pub peak_at: f64,
    /// Total time in contact, s.
    pub contact_s: f64,
}

/// Straight-line constant-speed reference along the approach direction.
struct LineReference {
    start: Vec2,
    dir: Vec2,
    speed: f64,
    length: f64,
    l1: f64,
    l2: f64,
    elbow: Elbow,
    limits: JointLimits,
}

impl LineReference {
    /// (θ_d, θ̇_d, θ̈_d) at time t; lengths in mm, speed in mm/s.
    fn sample(&self, t: f64) -> Result<(Vec2, Vec2, Vec2)> {
        let s = (self.speed * t).min(self.length);
        let moving = self.speed * t < self.length;
        let p = PlanarPose::from(self.start + self.dir * s);
        let q = inverse_kinematics(self.l1, self.l2, &p, self.elbow, &self.limits)?;
        if !moving {
            return Ok((q, Vec2::zeros(), Vec2::zeros()));
        }
        let j = jacobian(self.l1, self.l2, &q);
        let j_inv = j.try_inverse().ok_or(Error::Unreachable { x: p.x, y: p.y })?;
        let qd = j_inv * (self.dir * self.speed);
        let h = 1e-6;
        let j_dot = (jacobian(self.l1, self.l2, &(q + qd * h)) - jacobian(self.l1, self.l2, &(q - qd * h))) / (2.0 * h);
        let qdd = -(j_inv * (j_dot * qd));
        Ok((q, qd, qdd))
    }
}

pub struct StabInputs<'a> {
    pub arm: &'a ArmParams,
    pub observer: &'a ObserverConfig,
    pub threshold: Calibration,
    pub gains: &'a PidGains,
    pub stab: &'a StabConfig,
    pub medium: &'a ContactMedium,
}

/// One stab: the arm approaches the medium at `velocity` and the case's
/// reaction fires on detection.
pub fn run_stab_scenario(inp: &StabInputs, case: StabCase, velocity: f64) -> Result<StabResult> {
    let arm = inp.arm;
    let cfg = inp.stab;
    let medium = inp.medium;
    let (k0, strategy) = case
        .setup(cfg.k_low, cfg.k_high)
        .ok_or_else(|| Error::Invalid(vec![Violation::new("case", "must be 1, 2 or 3")]))?;
    if !(velocity.is_finite() && velocity > 0.0) {
        return Err(Error::Invalid(vec![Violation::new("velocity", "must be > 0")]));
    }
    let (l1, l2) = arm.link_length_mm();
    let dir = medium.dir();
    let reference = LineReference {
        start: medium.surface.to_vec() - dir * cfg.run_up_mm,
        dir,
        speed: velocity * 1000.0,
        length: cfg.run_up_mm + cfg.overtravel_mm,
        l1,
        l2,
        elbow: Elbow::Up,
        limits: arm.joint_limits(),
    };
    let dt = inp.observer.dt;

    // Start in steady motion on the line with the spring pre-loaded.
    let (q, qd, qdd) = reference.sample(0.0)?;
    let mut s = ArmState::at_rest(q, k0);
    s.theta_dot = qd;
    s.phi_dot = qd;
    let tau_link = mass_matrix(arm, &q) * qdd
        + coriolis_matrix(arm, &q, &qd) * qd
        + gravity_torque(arm, &q)
        + link_friction(arm, &qd);
    s.phi = q + tau_link.component_div(&s.stiffness);

    let mut obs = ObserverState::new(arm, &s).with_threshold(inp.threshold);
    let mut ctrl = JointController::new(*inp.gains);
    let mut reacted = false;
    let (lm1, lm2) = (arm.link_length[0], arm.link_length[1]);
    let contact = |st: &ArmState| -> (f64, f64, Vec2) {
        let ee = forward_kinematics(l1, l2, &st.theta);
        let j = jacobian(lm1, lm2, &st.theta);
        let v = j * st.theta_dot;
        let delta = medium.indentation(&ee);
        let f = contact_force(medium, delta, v.dot(&dir));
        (delta, f, j.transpose() * (-dir * f))
    };

    let t_max = reference.length / reference.speed + cfg.after_detection_s + 0.5;
    let mut res = StabResult {
        case_id: case.0,
        velocity_mps: velocity,
        f_p: 0.0,
        d_p: 0.0,
        detected_at: None,
        peak_at: 0.0,
        contact_s: 0.0,
    };
    while s.t < t_max {
        if let Some(td) = res.detected_at {
            if s.t >= td + cfg.after_detection_s {
                break;
            }
        }
        let tau = if reacted {
            Vec2::zeros()
        } else {
            let (q_d, qd_d, qdd_d) = reference.sample(s.t)?;
            ctrl.torque(arm, &s, &q_d, &qd_d, &qdd_d, dt)
        };
        let (next, rep) = step_with(arm, &s, &tau, dt, JointLock::NONE, |st| contact(st).2)?;
        s = next;
        obs = observer_step(inp.observer, &obs, arm, &s, &rep.tau_applied)?;
        let (delta, f, _) = contact(&s);
        if f > 0.0 {
            res.contact_s += dt;
        }
        if f > res.f_p {
            res.f_p = f;
            res.peak_at = s.t;
        }
        if f >= medium.f_y {
            res.d_p = res.d_p.max(delta.min(medium.depth_limit) * 1000.0);
        }
        if let (false, Some(ev)) = (reacted, obs.event()) {
            res.detected_at = Some(ev.time);
            s = apply_reaction(strategy, arm, &s);
            reacted = true;
        }
    }
    Ok(res)
}

/// Full cross product of velocities and cases, ordered by case then velocity.
pub fn sweep(inp: &StabInputs, velocities: &[f64], cases: &[StabCase]) -> Result<Vec<StabResult>> {
    if velocities.is_empty() || cases.is_empty() {
        return Err(Error::Empty("stab sweep grid"));
    }
    let jobs: Vec<(StabCase, f64)> = cases.iter().flat_map(|&c| velocities.iter().map(move |&v| (c, v))).collect();
    jobs.par_iter().map(|&(c, v)| run_stab_scenario(inp, c, v)).collect()
}

/// Cutting force placed halfway between the case-1 peak force at the anchor
/// velocity and at the next swept velocity above it, so the anchor run
/// indents without cutting and faster runs cut.
pub fn calibrate_cutting_force(inp: &StabInputs) -> Result<f64> {
    let cfg = inp.stab;
    let next = cfg.velocities_mps.iter().copied().filter(|&v| v > cfg.anchor_mps).fold(f64::INFINITY, f64::min);
    let next = if next.is_finite() { next } else { cfg.anchor_mps * 1.25 };
    let lo = run_stab_scenario(inp, StabCase(1), cfg.anchor_mps)?.f_p;
    let hi = run_stab_scenario(inp, StabCase(1), next)?.f_p;
    Ok(0.5 * (lo + hi))
}

/// Write the sweep table as CSV.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[StabResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["case", "velocity_mps", "F_p_N", "d_p_mm", "detected_at_s"])?;
    for r in rows {
        wr.write_record([
            r.case_id.to_string(),
            r.velocity_mps.to_string(),
            r.f_p.to_string(),
            r.d_p.to_string(),
            r.detected_at.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
