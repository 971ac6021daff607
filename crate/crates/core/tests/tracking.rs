//! Closed-loop tracking run to the dish.

use srl_core::config::SimConfig;
use srl_core::kinematics::PlanarPose;
use srl_core::tracking::{plan_to, track};

const DISH: PlanarPose = PlanarPose { x: -23.62, y: 650.69 };

#[test]
fn reaches_the_dish_accurately() {
    let cfg = SimConfig::default();
    let log = track(&cfg.track_inputs(cfg.threshold().unwrap()), &DISH).unwrap();
    let s = &log.summary;
    assert!(s.final_cartesian_error_mm < 3.0, "{s:?}");
    assert!(s.rms_error_deg.iter().all(|&e| e < 1.0), "{s:?}");
    assert!(s.detections.is_empty());
    assert_eq!(s.time_scale, 1.0);
    assert!((s.duration_s - 6.0).abs() < 1e-9);
}

#[test]
fn stiffness_follows_the_half_phase_switches() {
    let cfg = SimConfig::default();
    let log = track(&cfg.track_inputs(cfg.threshold().unwrap()), &DISH).unwrap();
    let k_at = |t: f64| log.rows.iter().find(|r| r.t >= t - 1e-9).unwrap().k1;
    assert_eq!(k_at(0.2), 8000.0);
    // The ramp down starts at 0.5 s and takes the full-range time.
    assert!(k_at(0.7) < 8000.0 && k_at(0.7) > 70.0);
    assert_eq!(k_at(1.0), 70.0);
    assert_eq!(k_at(5.4), 70.0);
    assert_eq!(k_at(6.0), 8000.0);
}

#[test]
fn tip_speed_respects_the_cap() {
    let cfg = SimConfig::default();
    let home = cfg.track.home();
    for target in [DISH, PlanarPose::new(-400.0, 700.0), PlanarPose::new(100.0, 600.0)] {
        let (plan, _) = plan_to(&cfg.arm, &cfg.track, &home, &target).unwrap();
        assert!(plan.peak_tip_speed(674.0, 545.0, 50_000) / 1000.0 <= cfg.track.speed_cap_mps * (1.0 + 1e-5));
    }
}

#[test]
fn unreachable_target_is_an_error() {
    let cfg = SimConfig::default();
    assert!(track(&cfg.track_inputs(cfg.threshold().unwrap()), &PlanarPose::new(0.0, 1500.0)).is_err());
}
