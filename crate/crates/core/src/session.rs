//! The closed-loop task session: plant, observer, controller and task
//! machine advanced together at the simulation rate, driven by button
//! events and operator commands.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::dynamics::{step_with, ArmState, JointLock, StepReport, Vec2};
use crate::error::{Error, Result, Violation};
use crate::fsm::{
    clamp_to_cooperative, fsm_step, target_reached, Button, ButtonEvent, Commands, Fsm, FsmInput, StiffnessMode,
    Target, TaskState, TorqueMode,
};
use crate::kinematics::{forward_kinematics, inverse_kinematics, jacobian, Elbow, PlanarPose};
use crate::motion::{cap_cartesian_speed, plan_trapezoid, JointController, JointPlan};
use crate::observer::{observer_step, Calibration, ObserverState};
use crate::safety::apply_reaction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    /// State broadcast rate, Hz.
    pub stream_hz: f64,
    /// Joint speed and acceleration bounds of task moves.
    pub joint_speed_deg_s: f64,
    pub joint_accel_deg_s2: f64,
    /// End-effector speed cap of task moves, m/s.
    pub speed_cap_mps: f64,
    /// Length of a batch run, s.
    pub duration_s: f64,
    /// Virtual hand used in the setting state, N/m and N·s/m.
    pub hand_stiffness: f64,
    pub hand_damping: f64,
    /// Button script replayed by `simulate`.
    pub events: Vec<TimedEvent>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            stream_hz: 50.0,
            joint_speed_deg_s: 45.0,
            joint_accel_deg_s2: 90.0,
            speed_cap_mps: 0.4,
            duration_s: 20.0,
            hand_stiffness: 400.0,
            hand_damping: 40.0,
            events: demo_script(),
        }
    }
}

impl SessionConfig {
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        for (name, x) in [
            ("stream_hz", self.stream_hz),
            ("joint_speed_deg_s", self.joint_speed_deg_s),
            ("joint_accel_deg_s2", self.joint_accel_deg_s2),
            ("speed_cap_mps", self.speed_cap_mps),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be > 0"));
            }
        }
        for (name, x) in [
            ("duration_s", self.duration_s),
            ("hand_stiffness", self.hand_stiffness),
            ("hand_damping", self.hand_damping),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be >= 0"));
            }
        }
        if let Err(e) = check_order(&self.events) {
            v.push(Violation::new(format!("{prefix}.events"), e));
        }
        v
    }
}

/// Button value as written in scripts: a boolean or one of
/// `on`/`off`/`pressed`/`released`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ValueRepr", into = "bool")]
pub struct ButtonValue(pub bool);

#[derive(Deserialize)]
#[serde(untagged)]
enum ValueRepr {
    Bool(bool),
    Word(String),
}

impl TryFrom<ValueRepr> for ButtonValue {
    type Error = String;
    fn try_from(v: ValueRepr) -> std::result::Result<Self, String> {
        match v {
            ValueRepr::Bool(b) => Ok(Self(b)),
            ValueRepr::Word(w) => match w.as_str() {
                "on" | "pressed" => Ok(Self(true)),
                "off" | "released" => Ok(Self(false)),
                other => Err(format!("unknown button value {other:?}")),
            },
        }
    }
}

impl From<ButtonValue> for bool {
    fn from(v: ButtonValue) -> bool {
        v.0
    }
}

/// One line of a button script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedEvent {
    pub t: f64,
    pub button: Button,
    pub value: ButtonValue,
}

impl TimedEvent {
    pub fn event(&self) -> ButtonEvent {
        ButtonEvent::new(self.button, self.value.0)
    }
}

fn check_order(events: &[TimedEvent]) -> std::result::Result<(), String> {
    let mut last = f64::NEG_INFINITY;
    for (i, e) in events.iter().enumerate() {
        if !(e.t.is_finite() && e.t >= 0.0) {
            return Err(format!("event {i}: t must be finite and >= 0"));
        }
        if e.t < last {
            return Err(format!("event {i}: timestamps must not decrease"));
        }
        last = e.t;
    }
    Ok(())
}

/// Parse a JSON-lines button script. Blank lines are skipped.
pub fn read_event_script<R: BufRead>(r: R) -> Result<Vec<TimedEvent>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TimedEvent = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(vec![Violation::new(format!("events line {}", n + 1), e.to_string())]))?;
        out.push(ev);
    }
    check_order(&out).map_err(|e| Error::Invalid(vec![Violation::new("events", e)]))?;
    Ok(out)
}

/// Operator command received from a client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandMessage {
    Button { id: Button, value: ButtonValue },
    SetTarget { x_mm: f64, y_mm: f64 },
    Reset,
    Pause,
    Resume,
    SetSpeedScale { value: f64 },
}

/// Reply to a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Ack { command: String, accepted: bool, detail: Option<String> },
    Error { message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateFlags {
    pub detected: bool,
    pub saturated: bool,
    pub limit_hit: bool,
}

/// Snapshot broadcast to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    /// Always "state".
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    /// Link angles, deg.
    pub theta: [f64; 2],
    /// Motor angles, deg.
    pub phi: [f64; 2],
    /// Joint stiffness, N·m/rad.
    pub k: [f64; 2],
    /// End effector, mm.
    pub ee: PlanarPose,
    /// Residual, N·m.
    pub r: [f64; 2],
    pub epsilon_r: [f64; 2],
    pub fsm_state: String,
    pub target: Option<PlanarPose>,
    pub knife: bool,
    pub paused: bool,
    pub speed_scale: f64,
    pub flags: StateFlags,
}

/// One logged simulation tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub t: f64,
    pub state: String,
    pub faulted: bool,
    /// Input accepted at this tick, if any.
    pub input: String,
    pub k_cmd1: f64,
    pub k_cmd2: f64,
    pub k1: f64,
    pub k2: f64,
    pub torque_mode: String,
    pub tau1: f64,
    pub tau2: f64,
    pub knife: bool,
    pub knife_extended: bool,
    pub target_x: f64,
    pub target_y: f64,
    pub q1: f64,
    pub q2: f64,
    pub x: f64,
    pub y: f64,
    pub r1: f64,
    pub r2: f64,
}

struct Motion {
    plan: JointPlan,
    /// Plan time, advanced by dt × speed scale.
    clock: f64,
}

pub struct Session {
    cfg: SimConfig,
    threshold: Calibration,
    pub arm_state: ArmState,
    obs: ObserverState,
    ctrl: JointController,
    fsm: Fsm,
    motion: Option<Motion>,
    /// Reference held when no motion is active, rad.
    hold: Vec2,
    paused: bool,
    speed_scale: f64,
    /// Operator hand position while hand-guiding, mm.
    hand: Option<PlanarPose>,
    last: StepReport,
    knife_time: f64,
    inputs: VecDeque<FsmInput>,
    last_input: String,
}

impl Session {
    /// Session at rest in the home pose.
    pub fn new(cfg: SimConfig, threshold: Calibration) -> Self {
        let home = cfg.task.home_pose();
        let s = ArmState::at_rest(home, cfg.track.k_high);
        let obs = ObserverState::new(&cfg.arm, &s).with_threshold(threshold);
        let ctrl = JointController::new(cfg.gains);
        let fsm = Fsm::new(&cfg.task);
        Self {
            threshold,
            arm_state: s,
            obs,
            ctrl,
            fsm,
            motion: None,
            hold: home,
            paused: false,
            speed_scale: 1.0,
            hand: None,
            last: StepReport { tau_applied: Vec2::zeros(), saturated: false, limit_hit: [false; 2] },
            knife_time: 0.0,
            inputs: VecDeque::new(),
            last_input: String::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn fsm(&self) -> &Fsm {
        &self.fsm
    }

    pub fn t(&self) -> f64 {
        self.arm_state.t
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn commands(&self) -> Commands {
        self.fsm.commands(self.cfg.track.reaction)
    }

    fn ee(&self) -> PlanarPose {
        let (l1, l2) = self.cfg.arm.link_length_mm();
        forward_kinematics(l1, l2, &self.arm_state.theta)
    }

    fn target_pose(&self) -> PlanarPose {
        let (l1, l2) = self.cfg.arm.link_length_mm();
        match self.commands().target {
            Target::Home => forward_kinematics(l1, l2, &self.cfg.task.home_pose()),
            Target::Pose(p) => p,
        }
    }

    /// Queue a button event for the next tick.
    pub fn push_button(&mut self, ev: ButtonEvent) {
        self.inputs.push_back(FsmInput::Button(ev));
    }

    /// Apply an operator command between ticks.
    pub fn handle_command(&mut self, cmd: CommandMessage) -> Reply {
        let ack = |name: &str, accepted: bool, detail: Option<String>| Reply::Ack {
            command: name.to_string(),
            accepted,
            detail,
        };
        match cmd {
            CommandMessage::Button { id, value } => {
                self.push_button(ButtonEvent::new(id, value.0));
                ack("button", true, None)
            }
            CommandMessage::SetTarget { x_mm, y_mm } => {
                let want = PlanarPose::new(x_mm, y_mm);
                if !want.is_finite() {
                    return Reply::Error { message: "set_target: coordinates must be finite".into() };
                }
                let p = clamp_to_cooperative(&want, &self.cfg.task, &self.cfg.arm);
                let detail = Some(format!("target ({:.2}, {:.2}) mm", p.x, p.y));
                match self.fsm.state {
                    TaskState::Setting => {
                        self.hand = Some(p);
                        ack("set_target", true, detail)
                    }
                    TaskState::AtDish { .. } if !self.fsm.faulted => {
                        self.fsm.dish_target = p;
                        self.fsm.state = TaskState::AtDish { in_transit: true };
                        self.command_stiffness();
                        self.start_motion();
                        ack("set_target", true, detail)
                    }
                    _ => ack("set_target", false, Some(format!("not accepted in state {}", self.fsm.state))),
                }
            }
            CommandMessage::Reset => {
                let was = self.fsm.faulted;
                self.inputs.push_back(FsmInput::Reset);
                ack("reset", was, None)
            }
            CommandMessage::Pause => {
                self.paused = true;
                ack("pause", true, None)
            }
            CommandMessage::Resume => {
                self.paused = false;
                ack("resume", true, None)
            }
            CommandMessage::SetSpeedScale { value } => {
                if !(value.is_finite() && value > 0.0 && value <= 2.0) {
                    return Reply::Error { message: "set_speed_scale: value must be in (0, 2]".into() };
                }
                self.speed_scale = value;
                ack("set_speed_scale", true, None)
            }
        }
    }

    /// Parse and apply a raw client message. Never panics on bad input.
    pub fn handle_text(&mut self, text: &str) -> Reply {
        match serde_json::from_str::<CommandMessage>(text) {
            Ok(cmd) => self.handle_command(cmd),
            Err(e) => Reply::Error { message: format!("malformed command: {e}") },
        }
    }

    fn command_stiffness(&mut self) {
        let k = match self.commands().stiffness {
            StiffnessMode::High => self.cfg.track.k_high,
            StiffnessMode::Low => self.cfg.track.k_low,
            StiffnessMode::Hold => return,
        };
        self.arm_state.set_stiffness_target(&self.cfg.arm, Vec2::repeat(k));
    }

    fn apply_input(&mut self, input: FsmInput) {
        let before = self.fsm;
        let ee = self.ee();
        let tr = fsm_step(&self.fsm, input, &ee, &self.cfg.task, &self.cfg.arm);
        if !tr.accepted {
            return;
        }
        self.fsm = tr.fsm;
        self.command_stiffness();
        self.last_input = match input {
            FsmInput::Button(b) => b.to_string(),
            FsmInput::Reached => "reached".into(),
            FsmInput::Collision => "collision".into(),
            FsmInput::Reset => "reset".into(),
        };
        match (before.state, self.fsm.state) {
            _ if self.fsm.faulted => {
                self.motion = None;
            }
            (_, s) if s.in_transit() => self.start_motion(),
            (TaskState::Setting, TaskState::AtDish { .. }) => {
                self.hand = None;
                self.start_motion();
            }
            (_, TaskState::Setting) => {
                self.motion = None;
                self.hand = Some(ee);
            }
            _ => {}
        }
    }

    /// Plan from the current link angles to the commanded target.
    fn start_motion(&mut self) {
        let arm = &self.cfg.arm;
        let (l1, l2) = arm.link_length_mm();
        let lim = arm.joint_limits();
        let goal = match self.commands().target {
            Target::Home => Ok(self.cfg.task.home_pose()),
            Target::Pose(p) => inverse_kinematics(l1, l2, &p, Elbow::Up, &lim),
        };
        let goal = match goal {
            Ok(q) => q,
            Err(e) => {
                log::error!("cannot plan to target: {e}");
                return;
            }
        };
        let start =
            self.arm_state.theta.zip_map(&Vec2::from(lim.min), f64::max).zip_map(&Vec2::from(lim.max), f64::min);
        let sc = &self.cfg.session;
        let leg = |i: usize| {
            plan_trapezoid(
                start[i],
                goal[i],
                sc.joint_speed_deg_s.to_radians(),
                sc.joint_accel_deg_s2.to_radians(),
                [lim.min[i], lim.max[i]],
            )
        };
        match (leg(0), leg(1)) {
            (Ok(a), Ok(b)) => {
                let (plan, _) = cap_cartesian_speed(&JointPlan::synchronized(a, b), l1, l2, sc.speed_cap_mps);
                self.motion = Some(Motion { plan, clock: 0.0 });
                self.hold = goal;
            }
            (Err(e), _) | (_, Err(e)) => log::error!("cannot plan to target: {e}"),
        }
        if self.fsm.state.in_transit() {
            self.obs.rebase(&self.cfg.arm, &self.arm_state);
        }
    }

    fn reference(&mut self, dt: f64) -> (Vec2, Vec2, Vec2) {
        let scale = self.speed_scale;
        match &mut self.motion {
            Some(m) => {
                m.clock += dt * scale;
                let (q, qd, qdd) = m.plan.sample(m.clock);
                (q, qd * scale, qdd * (scale * scale))
            }
            None => (self.hold, Vec2::zeros(), Vec2::zeros()),
        }
    }

    fn motion_done(&self) -> bool {
        self.motion.as_ref().is_none_or(|m| m.clock >= m.plan.duration())
    }

    /// Advance one simulation step. Returns the logged row, or `None` while
    /// paused.
    pub fn tick(&mut self) -> Result<Option<SessionRow>> {
        if self.paused {
            return Ok(None);
        }
        self.last_input.clear();
        // One queued operator input per tick, in arrival order.
        if let Some(input) = self.inputs.pop_front() {
            self.apply_input(input);
        }
        let arm = self.cfg.arm;
        let dt = self.cfg.observer.dt;
        let cmd = self.commands();
        let tau = match cmd.torque {
            TorqueMode::Zero => {
                self.ctrl.reset();
                Vec2::zeros()
            }
            TorqueMode::Position => {
                let (q, qd, qdd) = self.reference(dt);
                self.ctrl.torque(&arm, &self.arm_state, &q, &qd, &qdd, dt)
            }
        };
        let hand = self.hand.filter(|_| self.fsm.state == TaskState::Setting && !self.fsm.faulted);
        let (kh, ch) = (self.cfg.session.hand_stiffness, self.cfg.session.hand_damping);
        let (l1, l2) = (arm.link_length[0], arm.link_length[1]);
        let (next, rep) = step_with(&arm, &self.arm_state, &tau, dt, JointLock::NONE, |st| match hand {
            Some(h) => {
                let j = jacobian(l1, l2, &st.theta);
                let ee = forward_kinematics(l1, l2, &st.theta).to_vec();
                let f = (h.to_vec() / 1000.0 - ee) * kh - (j * st.theta_dot) * ch;
                j.transpose() * f
            }
            None => Vec2::zeros(),
        })?;
        self.arm_state = next;
        self.last = rep;
        self.obs = observer_step(&self.cfg.observer, &self.obs, &arm, &self.arm_state, &rep.tau_applied)?;

        let transit = self.fsm.state.in_transit() && !self.fsm.faulted;
        if transit {
            if let Some(ev) = self.obs.event() {
                log::warn!("collision at t = {:.3} s on joint {}", ev.time, ev.joint_index + 1);
                self.apply_input(FsmInput::Collision);
                self.arm_state = apply_reaction(self.cfg.track.reaction, &arm, &self.arm_state);
            } else if self.motion_done()
                && target_reached(&self.ee(), &self.target_pose(), &self.arm_state.theta_dot, &self.cfg.task)
            {
                self.apply_input(FsmInput::Reached);
            }
        }
        if self.commands().knife {
            self.knife_time += dt;
        } else {
            self.knife_time = 0.0;
        }
        Ok(Some(self.row(&self.commands())))
    }

    fn knife_extended(&self) -> bool {
        let half = 0.5 * self.cfg.task.knife_period_s;
        self.commands().knife && (self.knife_time / half).floor() as u64 % 2 == 1
    }

    fn row(&self, cmd: &Commands) -> SessionRow {
        let s = &self.arm_state;
        let ee = self.ee();
        let target = self.target_pose();
        SessionRow {
            t: s.t,
            state: self.fsm.state.to_string(),
            faulted: self.fsm.faulted,
            input: self.last_input.clone(),
            k_cmd1: s.stiffness_target[0],
            k_cmd2: s.stiffness_target[1],
            k1: s.stiffness[0],
            k2: s.stiffness[1],
            torque_mode: match cmd.torque {
                TorqueMode::Position => "position".into(),
                TorqueMode::Zero => "zero".into(),
            },
            tau1: self.last.tau_applied[0],
            tau2: self.last.tau_applied[1],
            knife: cmd.knife,
            knife_extended: self.knife_extended(),
            target_x: target.x,
            target_y: target.y,
            q1: s.theta[0].to_degrees(),
            q2: s.theta[1].to_degrees(),
            x: ee.x,
            y: ee.y,
            r1: self.obs.r[0],
            r2: self.obs.r[1],
        }
    }

    pub fn state_message(&self) -> StateMessage {
        let s = &self.arm_state;
        let deg = |v: &Vec2| [v[0].to_degrees(), v[1].to_degrees()];
        StateMessage {
            kind: "state".into(),
            t: s.t,
            theta: deg(&s.theta),
            phi: deg(&s.phi),
            k: [s.stiffness[0], s.stiffness[1]],
            ee: self.ee(),
            r: [self.obs.r[0], self.obs.r[1]],
            epsilon_r: [self.threshold.epsilon_r[0], self.threshold.epsilon_r[1]],
            fsm_state: self.fsm.state.to_string(),
            target: Some(self.target_pose()),
            knife: self.commands().knife,
            paused: self.paused,
            speed_scale: self.speed_scale,
            flags: StateFlags {
                detected: self.fsm.faulted,
                saturated: self.last.saturated,
                limit_hit: self.last.limit_hit.iter().any(|&b| b),
            },
        }
    }
}

/// Replay a button script as fast as possible for `duration_s` of
/// simulated time. Events fire on the first tick at or after their time.
pub fn run_batch(
    cfg: &SimConfig,
    threshold: Calibration,
    events: &[TimedEvent],
    duration_s: f64,
) -> Result<Vec<SessionRow>> {
    let mut session = Session::new(cfg.clone(), threshold);
    let dt = cfg.observer.dt;
    let ticks = (duration_s / dt).round() as usize;
    let mut rows = Vec::with_capacity(ticks);
    let mut next = 0;
    for k in 0..ticks {
        // Tick k advances from k·dt; compare in integer ticks to stay exact.
        while next < events.len() && (events[next].t / dt).round() as usize <= k {
            session.push_button(events[next].event());
            next += 1;
        }
        if let Some(row) = session.tick()? {
            rows.push(row);
        }
    }
    Ok(rows)
}

pub const SESSION_COLUMNS: [&str; 21] = [
    "t",
    "state",
    "faulted",
    "input",
    "k_cmd1",
    "k_cmd2",
    "k1",
    "k2",
    "torque_mode",
    "tau1",
    "tau2",
    "knife",
    "knife_extended",
    "target_x",
    "target_y",
    "q1",
    "q2",
    "x",
    "y",
    "r1",
    "r2",
];

pub fn write_session_csv<W: Write>(rows: &[SessionRow], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(SESSION_COLUMNS)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_session_csv<R: std::io::Read>(r: R) -> Result<Vec<SessionRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Scripted eating sequence used by the defaults and the demos:
/// home → dish → set → cut → home.
pub fn demo_script() -> Vec<TimedEvent> {
    let ev = |t, button, value| TimedEvent { t, button, value: ButtonValue(value) };
    vec![
        ev(0.5, Button::B1, true),
        ev(6.0, Button::B2, true),
        ev(8.0, Button::B2, false),
        ev(9.0, Button::B3, true),
        ev(11.0, Button::B3, false),
        ev(12.0, Button::B1, false),
    ]
}
