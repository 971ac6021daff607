//! Bimanual-eating task state machine, cooperative-region clamping and the
//! limit-switch homing routine.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ArmState, Vec2};
use crate::error::{Error, Result, Violation};
use crate::kinematics::{forward_kinematics, PlanarPose};
use crate::motion::{plan_trapezoid, JointController, JointPlan, PidGains};
use crate::params::ArmParams;
use crate::safety::ReactionStrategy;
use crate::workspace::{reachable, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TaskState {
    /// Home position; moving there when not at rest.
    Home {
        at_rest: bool,
    },
    /// Over the dish, or travelling to its target.
    AtDish {
        in_transit: bool,
    },
    /// Operator hand-guides the arm; motors in zero-torque mode.
    Setting,
    Cutting,
}

impl TaskState {
    pub const INITIAL: Self = Self::Home { at_rest: true };

    pub fn id(&self) -> &'static str {
        match self {
            Self::Home { .. } => "S1",
            Self::AtDish { .. } => "S2",
            Self::Setting => "S3",
            Self::Cutting => "S4",
        }
    }

    pub fn in_transit(&self) -> bool {
        matches!(self, Self::Home { at_rest: false } | Self::AtDish { in_transit: true })
    }

    pub fn at_rest(&self) -> bool {
        matches!(self, Self::Home { at_rest: true } | Self::AtDish { in_transit: false })
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Home { at_rest: true } | Self::AtDish { in_transit: false } => write!(f, "{}_rest", self.id()),
            Self::Home { at_rest: false } | Self::AtDish { in_transit: true } => write!(f, "{}_transit", self.id()),
            _ => f.write_str(self.id()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Button {
    B1,
    B2,
    B3,
}

/// B1 and B2 are latching switches (on/off); B3 is momentary
/// (pressed/released). Both map to `value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ButtonEvent {
    pub button: Button,
    pub value: bool,
}

impl ButtonEvent {
    pub const fn new(button: Button, value: bool) -> Self {
        Self { button, value }
    }

    /// Every event the operator can produce.
    pub const ALPHABET: [ButtonEvent; 6] = [
        Self::new(Button::B1, true),
        Self::new(Button::B1, false),
        Self::new(Button::B2, true),
        Self::new(Button::B2, false),
        Self::new(Button::B3, true),
        Self::new(Button::B3, false),
    ];
}

impl fmt::Display for ButtonEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match (self.button, self.value) {
            (Button::B3, true) => "pressed",
            (Button::B3, false) => "released",
            (_, true) => "on",
            (_, false) => "off",
        };
        write!(f, "{:?} {v}", self.button)
    }
}

/// Input consumed by [`fsm_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FsmInput {
    Button(ButtonEvent),
    /// The commanded target has been reached.
    Reached,
    /// The observer fired.
    Collision,
    /// Operator reset after a collision.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StiffnessMode {
    High,
    Low,
    /// Keep whatever stiffness the joints have.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorqueMode {
    /// Closed-loop position control.
    Position,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    /// The configured home joint angles.
    Home,
    Pose(PlanarPose),
}

/// Actuator commands implied by the machine state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commands {
    pub target: Target,
    pub stiffness: StiffnessMode,
    pub torque: TorqueMode,
    pub knife: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Plate centre, mm.
    pub dish_center: PlanarPose,
    pub cooperative_region: Region,
    /// Home joint angles, deg.
    pub home_pose_deg: [f64; 2],
    /// Position tolerance of the reached test, mm.
    pub reach_tol_mm: f64,
    /// Joint speed below which the arm counts as stopped, deg/s.
    pub rest_speed_deg_s: f64,
    /// Full knife reciprocation period, s.
    pub knife_period_s: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            dish_center: PlanarPose::new(-23.62, 650.69),
            cooperative_region: crate::workspace::WorkspaceSpec::default().cooperative_region,
            home_pose_deg: [10.0, 90.0],
            reach_tol_mm: 5.0,
            rest_speed_deg_s: 0.5,
            knife_period_s: 0.5,
        }
    }
}

impl TaskConfig {
    pub fn home_pose(&self) -> Vec2 {
        Vec2::new(self.home_pose_deg[0].to_radians(), self.home_pose_deg[1].to_radians())
    }

    pub fn violations(&self, prefix: &str, arm: &ArmParams) -> Vec<Violation> {
        let mut v = Vec::new();
        if !self.dish_center.is_finite() || !self.cooperative_region.contains(&self.dish_center) {
            v.push(Violation::new(format!("{prefix}.dish_center"), "must lie inside the cooperative region"));
        }
        if self.cooperative_region.is_empty() {
            v.push(Violation::new(format!("{prefix}.cooperative_region"), "must not be empty"));
        }
        if !arm.joint_limits().contains(&self.home_pose(), 1e-12) {
            v.push(Violation::new(format!("{prefix}.home_pose_deg"), "must lie within the joint limits"));
        }
        for (name, x) in [
            ("reach_tol_mm", self.reach_tol_mm),
            ("rest_speed_deg_s", self.rest_speed_deg_s),
            ("knife_period_s", self.knife_period_s),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be > 0"));
            }
        }
        v
    }
}

/// Machine state plus the data it carries between steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fsm {
    pub state: TaskState,
    /// Current task-space target while at the dish.
    pub dish_target: PlanarPose,
    /// Set by a collision; only a reset or B1 off clears it.
    pub faulted: bool,
}

impl Fsm {
    pub fn new(cfg: &TaskConfig) -> Self {
        Self { state: TaskState::INITIAL, dish_target: cfg.dish_center, faulted: false }
    }

    pub fn commands(&self, reaction: ReactionStrategy) -> Commands {
        let target = match self.state {
            TaskState::Home { .. } => Target::Home,
            _ => Target::Pose(self.dish_target),
        };
        if self.faulted {
            let stiffness = match reaction {
                ReactionStrategy::ZeroTorque => StiffnessMode::Hold,
                ReactionStrategy::ZeroTorquePlusSoften => StiffnessMode::Low,
            };
            return Commands { target, stiffness, torque: TorqueMode::Zero, knife: false };
        }
        let (stiffness, torque, knife) = match self.state {
            TaskState::Home { at_rest: true } | TaskState::AtDish { in_transit: false } => {
                (StiffnessMode::High, TorqueMode::Position, false)
            }
            TaskState::Home { at_rest: false } | TaskState::AtDish { in_transit: true } => {
                (StiffnessMode::Low, TorqueMode::Position, false)
            }
            TaskState::Setting => (StiffnessMode::Low, TorqueMode::Zero, false),
            TaskState::Cutting => (StiffnessMode::High, TorqueMode::Position, true),
        };
        Commands { target, stiffness, torque, knife }
    }
}

/// Result of one machine step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub fsm: Fsm,
    /// False when the input was not defined for the state and was ignored.
    pub accepted: bool,
}

/// Advance the machine. `ee` is the current end-effector position, used
/// when leaving the setting state.
pub fn fsm_step(fsm: &Fsm, input: FsmInput, ee: &PlanarPose, cfg: &TaskConfig, arm: &ArmParams) -> Transition {
    use Button::*;
    use TaskState::*;
    let mut next = *fsm;
    let b = |button, value| FsmInput::Button(ButtonEvent::new(button, value));
    let accepted = match (fsm.state, input) {
        (_, FsmInput::Collision) if fsm.state.in_transit() && !fsm.faulted => {
            next.faulted = true;
            true
        }
        (_, FsmInput::Reset) if fsm.faulted => {
            next.faulted = false;
            next.state = Home { at_rest: false };
            true
        }
        (_, i) if i == b(B1, false) && fsm.faulted => {
            next.faulted = false;
            next.state = Home { at_rest: false };
            true
        }
        (_, _) if fsm.faulted => false,
        (Home { .. }, i) if i == b(B1, true) => {
            next.state = AtDish { in_transit: true };
            next.dish_target = cfg.dish_center;
            true
        }
        (AtDish { .. } | Setting | Cutting, i) if i == b(B1, false) => {
            next.state = Home { at_rest: false };
            true
        }
        (Home { at_rest: false }, FsmInput::Reached) => {
            next.state = Home { at_rest: true };
            true
        }
        (AtDish { in_transit: true }, FsmInput::Reached) => {
            next.state = AtDish { in_transit: false };
            true
        }
        (AtDish { in_transit: false }, i) if i == b(B2, true) => {
            next.state = Setting;
            true
        }
        (Setting, i) if i == b(B2, false) => {
            next.state = AtDish { in_transit: false };
            next.dish_target = clamp_to_cooperative(ee, cfg, arm);
            true
        }
        (AtDish { in_transit: false }, i) if i == b(B3, true) => {
            next.state = Cutting;
            true
        }
        (Cutting, i) if i == b(B3, false) => {
            next.state = AtDish { in_transit: false };
            true
        }
        _ => false,
    };
    if !accepted && !matches!(input, FsmInput::Reached | FsmInput::Collision) {
        log::warn!("ignored {input:?} in state {}", fsm.state);
    }
    Transition { fsm: next, accepted }
}

/// End effector within tolerance of `target` and both joints nearly still.
pub fn target_reached(ee: &PlanarPose, target: &PlanarPose, theta_dot: &Vec2, cfg: &TaskConfig) -> bool {
    ee.distance(target) <= cfg.reach_tol_mm && theta_dot.amax() < cfg.rest_speed_deg_s.to_radians()
}

/// Raster spacing used for projecting onto the cooperative region, mm.
pub const CLAMP_STEP_MM: f64 = 1.0;

/// Nearest point of the cooperative region that the arm can reach.
///
/// Points already inside are returned unchanged. Otherwise the projection
/// onto the rectangle is tried first and, if that is out of reach, the
/// nearest reachable cell of a 1 mm raster of the region wins.
pub fn clamp_to_cooperative(pos: &PlanarPose, cfg: &TaskConfig, arm: &ArmParams) -> PlanarPose {
    let (l1, l2) = arm.link_length_mm();
    let lim = arm.joint_limits();
    let ok = |p: &PlanarPose| cfg.cooperative_region.contains(p) && reachable(l1, l2, &lim, p);
    if pos.is_finite() && ok(pos) {
        return *pos;
    }
    let fallback = cfg.dish_center;
    if !pos.is_finite() {
        return fallback;
    }
    if let Some(p) = cfg.cooperative_region.project(pos) {
        if ok(&p) {
            return p;
        }
    }
    let mut best: Option<(f64, PlanarPose)> = None;
    for r in &cfg.cooperative_region.0 {
        let nx = ((r.x_max - r.x_min) / CLAMP_STEP_MM).floor() as i64;
        let ny = ((r.y_max - r.y_min) / CLAMP_STEP_MM).floor() as i64;
        for i in 0..=nx {
            for j in 0..=ny {
                let c = PlanarPose::new(r.x_min + i as f64 * CLAMP_STEP_MM, r.y_min + j as f64 * CLAMP_STEP_MM);
                if !reachable(l1, l2, &lim, &c) {
                    continue;
                }
                let d = c.distance(pos);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
        }
    }
    best.map_or(fallback, |(_, p)| p)
}

/// Homing routine settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomingConfig {
    /// Search speed toward the switches, deg/s.
    pub speed_deg_s: f64,
    /// Give up after this long without both switches, s.
    pub timeout_s: f64,
    /// Time allowed to settle on the home pose, s.
    pub settle_s: f64,
    pub stiffness: f64,
    pub dt: f64,
}

impl Default for HomingConfig {
    fn default() -> Self {
        Self { speed_deg_s: 10.0, timeout_s: 30.0, settle_s: 1.0, stiffness: 8000.0, dt: 1e-3 }
    }
}

impl HomingConfig {
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        for (name, x) in [
            ("speed_deg_s", self.speed_deg_s),
            ("timeout_s", self.timeout_s),
            ("stiffness", self.stiffness),
            ("dt", self.dt),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be > 0"));
            }
        }
        if !(self.settle_s.is_finite() && self.settle_s >= 0.0) {
            v.push(Violation::new(format!("{prefix}.settle_s"), "must be >= 0"));
        }
        v
    }
}

/// Incremental encoders: they read the link angle plus an unknown offset
/// until homing fixes the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoders {
    pub offset: Vec2,
}

impl Encoders {
    pub fn read(&self, theta: &Vec2) -> Vec2 {
        theta + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomingReport {
    pub state: ArmState,
    /// Encoder offset after re-referencing (ideally zero).
    pub encoders: Encoders,
    pub switches_seen: [bool; 2],
    /// Simulated time spent on the search, s.
    pub search_s: f64,
    pub duration_s: f64,
}

/// Drive both joints toward their lower limit switches, re-zero the
/// encoders on the trip, then move to `home_pose` using the corrected
/// readings.
pub fn home(
    arm: &ArmParams,
    state: &ArmState,
    encoders: Encoders,
    gains: &PidGains,
    cfg: &HomingConfig,
    home_pose: &Vec2,
) -> Result<HomingReport> {
    let dt = cfg.dt;
    let lim = arm.joint_limits();
    let speed = cfg.speed_deg_s.to_radians();
    let mut s = *state;
    s.set_stiffness_target(arm, Vec2::repeat(cfg.stiffness));
    let mut enc = encoders;
    let mut ctrl = JointController::new(*gains);
    let mut seen = [false; 2];
    let start = s.t;
    // Held reference for each joint once its switch has tripped.
    let mut hold: [Option<f64>; 2] = [None; 2];
    let mut ref0 = enc.read(&s.theta);

    while !(seen[0] && seen[1]) {
        for i in 0..2 {
            if !seen[i] && s.theta[i] <= lim.min[i] {
                seen[i] = true;
                // The switch sits at the lower limit: the count is reset to
                // read exactly that angle.
                enc.offset[i] = lim.min[i] - s.theta[i];
                hold[i] = Some(lim.min[i]);
                ref0[i] = lim.min[i];
            }
        }
        if seen[0] && seen[1] {
            break;
        }
        if s.t - start > cfg.timeout_s {
            return Err(Error::HomingTimeout(s.t - start));
        }
        let t = s.t - start;
        let meas = enc.read(&s.theta);
        let mut q_d = Vec2::zeros();
        let mut qd_d = Vec2::zeros();
        for i in 0..2 {
            match hold[i] {
                Some(h) => q_d[i] = h,
                None => {
                    q_d[i] = ref0[i] - speed * t;
                    qd_d[i] = -speed;
                }
            }
        }
        let tau = measured_torque(&mut ctrl, arm, &s, &meas, (&q_d, &qd_d, &Vec2::zeros()), dt);
        s = step(arm, &s, &tau, &Vec2::zeros(), dt)?.0;
    }
    let search_s = s.t - start;

    let from = enc.read(&s.theta);
    let leg = |i: usize| plan_trapezoid(from[i], home_pose[i], speed.max(1e-3), 4.0 * speed, [lim.min[i], lim.max[i]]);
    let plan = JointPlan::synchronized(leg(0)?, leg(1)?);
    let t0 = s.t;
    let n = ((plan.duration() + cfg.settle_s) / dt).round() as usize;
    for _ in 0..n {
        let (q_d, qd_d, qdd_d) = plan.sample(s.t - t0);
        let meas = enc.read(&s.theta);
        let tau = measured_torque(&mut ctrl, arm, &s, &meas, (&q_d, &qd_d, &qdd_d), dt);
        s = step(arm, &s, &tau, &Vec2::zeros(), dt)?.0;
    }
    Ok(HomingReport { state: s, encoders: enc, switches_seen: seen, search_s, duration_s: s.t - start })
}

/// Controller torque computed from encoder readings instead of true angles.
fn measured_torque(
    ctrl: &mut JointController,
    arm: &ArmParams,
    s: &ArmState,
    meas: &Vec2,
    (q_d, qd_d, qdd_d): (&Vec2, &Vec2, &Vec2),
    dt: f64,
) -> Vec2 {
    let mut shifted = *s;
    // The motor encoders share the link encoder's reference.
    shifted.phi += meas - s.theta;
    shifted.theta = *meas;
    ctrl.torque(arm, &shifted, q_d, qd_d, qdd_d, dt)
}

/// End-effector position of `s`, mm.
pub fn ee_position(arm: &ArmParams, s: &ArmState) -> PlanarPose {
    let (l1, l2) = arm.link_length_mm();
    forward_kinematics(l1, l2, &s.theta)
}
