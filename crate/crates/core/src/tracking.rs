//! Point-to-point tracking run: IK, timed trapezoid, Cartesian cap,
//! stiffness schedule and closed-loop simulation with the observer active.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ArmState, Vec2};
use crate::error::{Error, Result, Violation};
use crate::kinematics::{forward_kinematics, inverse_kinematics, Elbow, PlanarPose};
use crate::motion::{cap_cartesian_speed, plan_timed, JointController, JointPlan, PidGains, StiffnessSchedule};
use crate::observer::{observer_step, Calibration, DetectionEvent, ObserverConfig, ObserverState};
use crate::params::ArmParams;
use crate::safety::{apply_reaction, ReactionStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Acceleration (and deceleration) time, s.
    pub t_acc: f64,
    /// Plan duration before any speed-cap stretching, s.
    pub t_total: f64,
    /// End-effector speed cap, m/s.
    pub speed_cap_mps: f64,
    pub k_high: f64,
    pub k_low: f64,
    pub elbow: Elbow,
    /// Start pose, deg.
    pub home_deg: [f64; 2],
    /// Extra simulated time after the plan ends, s.
    pub settle: f64,
    pub reaction: ReactionStrategy,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            t_acc: 1.0,
            t_total: 6.0,
            speed_cap_mps: 0.4,
            k_high: 8000.0,
            k_low: 70.0,
            elbow: Elbow::Up,
            home_deg: [10.0, 90.0],
            settle: 0.0,
            reaction: ReactionStrategy::ZeroTorquePlusSoften,
        }
    }
}

impl TrackConfig {
    pub fn home(&self) -> Vec2 {
        Vec2::new(self.home_deg[0].to_radians(), self.home_deg[1].to_radians())
    }

    pub fn violations(&self, prefix: &str, arm: &ArmParams) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.t_acc > 0.0 && self.t_total >= 2.0 * self.t_acc && self.t_total.is_finite()) {
            v.push(Violation::new(format!("{prefix}.t_acc"), "need 0 < 2·t_acc <= t_total"));
        }
        if !(self.speed_cap_mps.is_finite() && self.speed_cap_mps > 0.0) {
            v.push(Violation::new(format!("{prefix}.speed_cap_mps"), "must be > 0"));
        }
        for (name, k) in [("k_high", self.k_high), ("k_low", self.k_low)] {
            if !(k >= arm.stiffness_min && k <= arm.stiffness_max) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must lie within the arm stiffness range"));
            }
        }
        if !(self.settle.is_finite() && self.settle >= 0.0) {
            v.push(Violation::new(format!("{prefix}.settle"), "must be >= 0"));
        }
        if !arm.joint_limits().contains(&self.home(), 1e-12) {
            v.push(Violation::new(format!("{prefix}.home_deg"), "must lie within the joint limits"));
        }
        v
    }
}

/// One logged tick. Angles in degrees, stiffness in N·m/rad, torques and
/// residuals in N·m, tip position in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub q1_d: f64,
    pub q2_d: f64,
    pub q1: f64,
    pub q2: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub k1: f64,
    pub k2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub r1: f64,
    pub r2: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub target: PlanarPose,
    pub final_pose: PlanarPose,
    pub final_cartesian_error_mm: f64,
    pub rms_error_deg: [f64; 2],
    pub max_abs_error_deg: [f64; 2],
    /// Uniform time-scaling applied by the speed cap (1 = none).
    pub time_scale: f64,
    pub duration_s: f64,
    pub detections: Vec<DetectionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
    pub summary: TrackSummary,
}

/// Error statistics of a log against its reference columns.
pub fn joint_errors(rows: &[LogRow]) -> ([f64; 2], [f64; 2]) {
    if rows.is_empty() {
        return ([0.0; 2], [0.0; 2]);
    }
    let mut sq = [0.0; 2];
    let mut max = [0.0f64; 2];
    for r in rows {
        for (i, e) in [r.q1_d - r.q1, r.q2_d - r.q2].into_iter().enumerate() {
            sq[i] += e * e;
            max[i] = max[i].max(e.abs());
        }
    }
    let n = rows.len() as f64;
    ([(sq[0] / n).sqrt(), (sq[1] / n).sqrt()], max)
}

pub struct TrackInputs<'a> {
    pub arm: &'a ArmParams,
    pub observer: &'a ObserverConfig,
    pub threshold: Calibration,
    pub gains: &'a PidGains,
    pub track: &'a TrackConfig,
}

/// Plan for reaching `target` from `start` (rad), after the speed cap.
pub fn plan_to(arm: &ArmParams, track: &TrackConfig, start: &Vec2, target: &PlanarPose) -> Result<(JointPlan, f64)> {
    let (l1, l2) = arm.link_length_mm();
    let limits = arm.joint_limits();
    let q_f = inverse_kinematics(l1, l2, target, track.elbow, &limits)?;
    let leg = |i: usize| plan_timed(start[i], q_f[i], track.t_acc, track.t_total, [limits.min[i], limits.max[i]]);
    let plan = JointPlan([leg(0)?, leg(1)?]);
    Ok(cap_cartesian_speed(&plan, l1, l2, track.speed_cap_mps))
}

/// Drive the arm from the configured home pose to `target`.
pub fn track(inp: &TrackInputs, target: &PlanarPose) -> Result<TrajectoryLog> {
    let arm = inp.arm;
    let (l1, l2) = arm.link_length_mm();
    let home = inp.track.home();
    let (plan, time_scale) = plan_to(arm, inp.track, &home, target)?;
    let schedule = StiffnessSchedule {
        k_high: inp.track.k_high,
        k_low: inp.track.k_low,
        t_acc: plan.0[0].t_acc,
        t_dec: plan.0[0].t_dec,
        t_total: plan.duration(),
    };
    let dt = inp.observer.dt;
    let t_end = plan.duration() + inp.track.settle;
    let ticks = (t_end / dt).round() as usize;

    let mut s = ArmState::at_rest(home, inp.track.k_high);
    let mut obs = ObserverState::new(arm, &s).with_threshold(inp.threshold);
    let mut ctrl = JointController::new(*inp.gains);
    let mut reacted = false;
    let mut detections = Vec::new();
    let mut rows = Vec::with_capacity(ticks + 1);
    let mut tau = Vec2::zeros();
    let (mut q_d, _, _) = plan.sample(0.0);
    rows.push(log_row(&s, &q_d, &tau, &obs.r, l1, l2));

    for _ in 0..ticks {
        let (qd, qdot_d, qddot_d) = plan.sample(s.t);
        q_d = qd;
        if reacted {
            tau = Vec2::zeros();
        } else {
            s.set_stiffness_target(arm, Vec2::repeat(schedule.stiffness_at(s.t)));
            tau = ctrl.torque(arm, &s, &q_d, &qdot_d, &qddot_d, dt);
        }
        let (next, rep) = step(arm, &s, &tau, &Vec2::zeros(), dt)?;
        s = next;
        tau = rep.tau_applied;
        obs = observer_step(inp.observer, &obs, arm, &s, &tau)?;
        if let (false, Some(ev)) = (reacted, obs.event()) {
            log::warn!("collision detected at t = {:.3} s on joint {}", ev.time, ev.joint_index + 1);
            detections.push(ev);
            s = apply_reaction(inp.track.reaction, arm, &s);
            reacted = true;
        }
        let (qd_now, _, _) = plan.sample(s.t);
        rows.push(log_row(&s, &qd_now, &tau, &obs.r, l1, l2));
    }

    let final_pose = forward_kinematics(l1, l2, &s.theta);
    let (rms, max) = joint_errors(&rows);
    let summary = TrackSummary {
        target: *target,
        final_pose,
        final_cartesian_error_mm: final_pose.distance(target),
        rms_error_deg: rms,
        max_abs_error_deg: max,
        time_scale,
        duration_s: s.t,
        detections,
    };
    Ok(TrajectoryLog { rows, summary })
}

fn log_row(s: &ArmState, q_d: &Vec2, tau: &Vec2, r: &Vec2, l1: f64, l2: f64) -> LogRow {
    let ee = forward_kinematics(l1, l2, &s.theta);
    LogRow {
        t: s.t,
        q1_d: q_d[0].to_degrees(),
        q2_d: q_d[1].to_degrees(),
        q1: s.theta[0].to_degrees(),
        q2: s.theta[1].to_degrees(),
        phi1: s.phi[0].to_degrees(),
        phi2: s.phi[1].to_degrees(),
        k1: s.stiffness[0],
        k2: s.stiffness[1],
        tau1: tau[0],
        tau2: tau[1],
        r1: r[0],
        r2: r[1],
        x: ee.x,
        y: ee.y,
    }
}

/// Write rows as CSV with a header line (header only for an empty log).
pub fn write_csv<W: Write>(rows: &[LogRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(LOG_COLUMNS)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub const LOG_COLUMNS: [&str; 15] =
    ["t", "q1_d", "q2_d", "q1", "q2", "phi1", "phi2", "k1", "k2", "tau1", "tau2", "r1", "r2", "x", "y"];

pub fn read_csv<R: Read>(r: R) -> Result<Vec<LogRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Summary as pretty-printed JSON.
pub fn write_summary_json<W: Write>(summary: &TrackSummary, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, summary)?;
    Ok(())
}
