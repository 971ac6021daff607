//! Task machine: exhaustive transition check, region clamping and homing.

use std::collections::{BTreeMap, HashSet, VecDeque};

use proptest::prelude::*;
use srl_core::fsm::{
    clamp_to_cooperative, fsm_step, home, Commands, Encoders, Fsm, FsmInput, HomingConfig, StiffnessMode, TaskConfig,
    TorqueMode,
};
use srl_core::kinematics::PlanarPose;
use srl_core::motion::PidGains;
use srl_core::safety::ReactionStrategy;
use srl_core::workspace::reachable;
use srl_core::{ArmParams, ArmState, Button, ButtonEvent, Error, TaskState, Vec2};

fn inputs() -> Vec<FsmInput> {
    let mut v: Vec<FsmInput> = ButtonEvent::ALPHABET.iter().map(|&b| FsmInput::Button(b)).collect();
    v.extend([FsmInput::Reached, FsmInput::Collision, FsmInput::Reset]);
    v
}

fn label(i: &FsmInput) -> String {
    match i {
        FsmInput::Button(b) => b.to_string(),
        other => format!("{other:?}").to_lowercase(),
    }
}

fn node(f: &Fsm) -> String {
    if f.faulted {
        format!("{}!", f.state)
    } else {
        f.state.to_string()
    }
}

/// Every accepted transition; anything not listed leaves the machine as is.
const TABLE: &[(&str, &str, &str)] = &[
    ("S1_rest", "B1 on", "S2_transit"),
    ("S1_transit", "B1 on", "S2_transit"),
    ("S1_transit", "reached", "S1_rest"),
    ("S1_transit", "collision", "S1_transit!"),
    ("S2_transit", "reached", "S2_rest"),
    ("S2_transit", "B1 off", "S1_transit"),
    ("S2_transit", "collision", "S2_transit!"),
    ("S2_rest", "B1 off", "S1_transit"),
    ("S2_rest", "B2 on", "S3"),
    ("S2_rest", "B3 pressed", "S4"),
    ("S3", "B2 off", "S2_rest"),
    ("S3", "B1 off", "S1_transit"),
    ("S4", "B3 released", "S2_rest"),
    ("S4", "B1 off", "S1_transit"),
    ("S1_transit!", "reset", "S1_transit"),
    ("S1_transit!", "B1 off", "S1_transit"),
    ("S2_transit!", "reset", "S1_transit"),
    ("S2_transit!", "B1 off", "S1_transit"),
];

/// Breadth-first search from the initial state over `alphabet`.
fn explore(alphabet: &[FsmInput]) -> BTreeMap<(String, String), (String, bool, Fsm)> {
    let cfg = TaskConfig::default();
    let arm = ArmParams::preset();
    let start = Fsm::new(&cfg);
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([start]);
    let mut edges = BTreeMap::new();
    seen.insert(node(&start));
    while let Some(f) = queue.pop_front() {
        for i in alphabet {
            let tr = fsm_step(&f, *i, &cfg.dish_center, &cfg, &arm);
            edges.insert((node(&f), label(i)), (node(&tr.fsm), tr.accepted, tr.fsm));
            if seen.insert(node(&tr.fsm)) {
                queue.push_back(tr.fsm);
            }
        }
    }
    edges
}

#[test]
fn bfs_confirms_the_transition_table() {
    let edges = explore(&inputs());
    let states: HashSet<&str> = edges.keys().map(|(s, _)| s.as_str()).collect();
    assert_eq!(states.len(), 8, "{states:?}");
    let table: BTreeMap<(&str, &str), &str> = TABLE.iter().map(|&(a, i, b)| ((a, i), b)).collect();
    for ((from, input), (to, accepted, _)) in &edges {
        match table.get(&(from.as_str(), input.as_str())) {
            Some(expect) => {
                assert!(accepted, "{from} --{input}--> should be accepted");
                assert_eq!(to, expect, "{from} --{input}-->");
            }
            None => {
                assert!(!accepted, "{from} --{input}--> {to} is not in the table");
                assert_eq!(to, from);
            }
        }
    }
    assert_eq!(edges.values().filter(|e| e.1).count(), TABLE.len());
}

#[test]
fn every_state_reachable_by_buttons_and_s4_only_from_s2() {
    let mut alphabet: Vec<FsmInput> = ButtonEvent::ALPHABET.iter().map(|&b| FsmInput::Button(b)).collect();
    alphabet.push(FsmInput::Reached);
    let edges = explore(&alphabet);
    let reached: HashSet<&str> = edges.values().map(|e| e.0.as_str()).chain(["S1_rest"]).collect();
    for s in ["S1_rest", "S1_transit", "S2_transit", "S2_rest", "S3", "S4"] {
        assert!(reached.contains(s), "{s} unreachable");
    }
    for ((from, _), (to, _, _)) in &edges {
        if to == "S4" && from != "S4" {
            assert!(from.starts_with("S2"), "S4 entered from {from}");
        }
    }
}

fn check_contract(f: &Fsm, c: &Commands, reaction: ReactionStrategy) {
    if f.faulted {
        assert_eq!(c.torque, TorqueMode::Zero);
        assert!(!c.knife);
        let want = if reaction == ReactionStrategy::ZeroTorque { StiffnessMode::Hold } else { StiffnessMode::Low };
        assert_eq!(c.stiffness, want);
        return;
    }
    if f.state.at_rest() {
        assert_eq!(c.stiffness, StiffnessMode::High, "{}", f.state);
    }
    if f.state.in_transit() {
        assert_eq!(c.stiffness, StiffnessMode::Low, "{}", f.state);
    }
    assert_eq!(c.torque == TorqueMode::Zero, f.state == TaskState::Setting);
    assert_eq!(c.knife, f.state == TaskState::Cutting);
}

#[test]
fn commands_honour_the_state_contract() {
    for (_, (_, _, f)) in explore(&inputs()) {
        for r in [ReactionStrategy::ZeroTorque, ReactionStrategy::ZeroTorquePlusSoften] {
            check_contract(&f, &f.commands(r), r);
        }
    }
}

#[test]
fn leaving_setting_records_the_clamped_hand_position() {
    let cfg = TaskConfig::default();
    let arm = ArmParams::preset();
    let f = Fsm { state: TaskState::Setting, ..Fsm::new(&cfg) };
    let ee = PlanarPose::new(-100.0, 680.0);
    let tr = fsm_step(&f, FsmInput::Button(ButtonEvent::new(Button::B2, false)), &ee, &cfg, &arm);
    assert_eq!(tr.fsm.state, TaskState::AtDish { in_transit: false });
    assert_eq!(tr.fsm.dish_target, ee);
    // Hand left over the torso: stored target is pulled back into the region.
    let tr =
        fsm_step(&f, FsmInput::Button(ButtonEvent::new(Button::B2, false)), &PlanarPose::new(300.0, 100.0), &cfg, &arm);
    assert!(cfg.cooperative_region.contains(&tr.fsm.dish_target));
}

/// Nearest reachable point of the cooperative region on a 0.5 mm raster.
fn oracle_nearest(pos: &PlanarPose, cfg: &TaskConfig, arm: &ArmParams) -> f64 {
    let (l1, l2) = arm.link_length_mm();
    let lim = arm.joint_limits();
    let mut best = f64::INFINITY;
    for r in &cfg.cooperative_region.0 {
        let nx = ((r.x_max - r.x_min) / 0.5) as i64;
        let ny = ((r.y_max - r.y_min) / 0.5) as i64;
        for i in 0..=nx {
            for j in 0..=ny {
                let c = PlanarPose::new(r.x_min + 0.5 * i as f64, r.y_min + 0.5 * j as f64);
                let d = c.distance(pos);
                if d < best && reachable(l1, l2, &lim, &c) {
                    best = d;
                }
            }
        }
    }
    best
}

fn check_clamp(pos: PlanarPose) {
    let cfg = TaskConfig::default();
    let arm = ArmParams::preset();
    let (l1, l2) = arm.link_length_mm();
    let out = clamp_to_cooperative(&pos, &cfg, &arm);
    assert!(cfg.cooperative_region.contains(&out), "{pos:?} -> {out:?}");
    assert!(reachable(l1, l2, &arm.joint_limits(), &out), "{pos:?} -> {out:?}");
    let d = out.distance(&pos);
    let best = oracle_nearest(&pos, &cfg, &arm);
    // Both rasters are within half a cell diagonal of the true optimum.
    assert!(d <= best + 0.72 && d >= best - 0.36, "{pos:?}: {d} vs oracle {best}");
}

#[test]
fn clamp_keeps_inside_points() {
    let cfg = TaskConfig::default();
    let arm = ArmParams::preset();
    for p in [cfg.dish_center, PlanarPose::new(-400.0, 600.0), PlanarPose::new(100.0, 740.0)] {
        assert_eq!(clamp_to_cooperative(&p, &cfg, &arm), p);
    }
}

#[test]
fn clamp_pulls_torso_and_far_points_into_the_region() {
    let cfg = TaskConfig::default();
    let arm = ArmParams::preset();
    let human = srl_core::WorkspaceSpec::default().human_region;
    for p in [PlanarPose::new(400.0, 150.0), PlanarPose::new(200.0, 10.0)] {
        assert!(human.contains(&p));
        let out = clamp_to_cooperative(&p, &cfg, &arm);
        assert!(!human.contains(&out));
        check_clamp(p);
    }
    for p in [PlanarPose::new(0.0, 2000.0), PlanarPose::new(-1500.0, 700.0), PlanarPose::new(900.0, 900.0)] {
        check_clamp(p);
    }
    let out = clamp_to_cooperative(&PlanarPose::new(f64::NAN, 1.0), &cfg, &arm);
    assert_eq!(out, cfg.dish_center);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn clamp_matches_exhaustive_raster(x in -1500.0f64..1500.0, y in -500.0f64..1500.0) {
        check_clamp(PlanarPose::new(x, y));
    }
}

fn homing_start(theta_deg: [f64; 2]) -> ArmState {
    ArmState::at_rest(Vec2::new(theta_deg[0].to_radians(), theta_deg[1].to_radians()), 8000.0)
}

#[test]
fn homing_absorbs_an_encoder_offset() {
    let arm = ArmParams::preset();
    let cfg = HomingConfig::default();
    let task = TaskConfig::default();
    let offset = Vec2::repeat(3f64.to_radians());
    let rep =
        home(&arm, &homing_start([30.0, 60.0]), Encoders { offset }, &PidGains::default(), &cfg, &task.home_pose())
            .unwrap();
    assert_eq!(rep.switches_seen, [true, true]);
    assert!(rep.encoders.offset.amax().to_degrees() < 0.1, "residual offset {:?}", rep.encoders.offset);
    let err = (rep.state.theta - task.home_pose()).amax().to_degrees();
    assert!(err < 0.1, "pose error {err}°");
}

#[test]
fn homing_from_the_switches_is_immediate() {
    let arm = ArmParams::preset();
    let cfg = HomingConfig::default();
    let task = TaskConfig::default();
    let rep = home(
        &arm,
        &homing_start([0.0, 0.0]),
        Encoders { offset: Vec2::zeros() },
        &PidGains::default(),
        &cfg,
        &task.home_pose(),
    )
    .unwrap();
    assert_eq!(rep.search_s, 0.0);
    assert_eq!(rep.switches_seen, [true, true]);
    assert!((rep.state.theta - task.home_pose()).amax().to_degrees() < 0.1);
}

#[test]
fn homing_times_out_when_a_switch_is_never_hit() {
    let arm = ArmParams::preset();
    let cfg = HomingConfig { timeout_s: 0.5, ..Default::default() };
    let r = home(
        &arm,
        &homing_start([40.0, 100.0]),
        Encoders { offset: Vec2::zeros() },
        &PidGains::default(),
        &cfg,
        &Vec2::new(0.2, 1.5),
    );
    assert!(matches!(r, Err(Error::HomingTimeout(_))));
}
