use platoon_core::config::{CfmKind, ScenarioConfig, VehicleInit};
use platoon_core::model::Zone;
use platoon_core::sim::{run, SimError, SimulationTrace, TRACE_CSV_VERSION};

#[test]
fn csv_header_matches_golden_file() {
    assert_eq!(TRACE_CSV_VERSION, 1);
    let golden = include_str!("golden/trace_header_v1.csv").trim_end();
    assert_eq!(SimulationTrace::csv_header(4), golden);

    let mut config = ScenarioConfig::default();
    config.controller.t_h = 1.0;
    let trace = run(&config.resolve().unwrap()).unwrap();
    let mut out = Vec::new();
    trace.write_csv(&mut out, 1).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), golden);
    let width = golden.split(',').count();
    assert!(text.lines().all(|l| l.split(',').count() == width));
    assert_eq!(text.lines().count(), 1 + 11);
}

#[test]
fn already_formed_platoon_is_detected_at_once_and_left_alone() {
    let mut config = ScenarioConfig::default();
    config.controller.t_h = 20.0;
    let bounds = config.bounds.to_bounds();
    let v = 24.0;
    let gap = config.cfm.to_model(&bounds).equilibrium_gap(v).unwrap();
    config.init.vehicles = Some(
        (0..4)
            .map(|i| VehicleInit {
                p: 500.0 - i as f64 * (gap + bounds.veh_len),
                v,
            })
            .collect(),
    );
    let trace = run(&config.resolve().unwrap()).unwrap();
    assert_eq!(trace.summary.formation_time, Some(0.0));
    for r in &trace.rows {
        assert!(r.accels.iter().all(|u| u.abs() < 1e-6), "step {}: {:?}", r.step, r.accels);
    }
}

#[test]
fn cav_hands_back_to_its_car_following_model_after_the_zone() {
    let mut config = ScenarioConfig::default();
    config.geometry.control_len = 200.0;
    config.controller.t_h = 20.0;
    config.init.cav_position = Some(450.0);
    let scenario = config.resolve().unwrap();
    let trace = run(&scenario).unwrap();
    let zones: Vec<Zone> = trace.rows.iter().map(|r| r.zone).collect();
    let first_control = zones.iter().position(|z| *z == Zone::Control).unwrap();
    let first_exit = zones.iter().position(|z| *z == Zone::Exited).unwrap();
    assert!(0 < first_control && first_control < first_exit);
    assert!(zones[..first_control].iter().all(|z| *z == Zone::Buffer));
    assert!(zones[first_control..first_exit].iter().all(|z| *z == Zone::Control));
    assert!(zones[first_exit..].iter().all(|z| *z == Zone::Exited));
    assert_eq!(trace.summary.cav_entry_time, Some(trace.rows[first_control].time));
    assert_eq!(trace.summary.cav_exit_time, Some(trace.rows[first_exit].time));

    let free_road = |v: f64| scenario.bounds.clamp_accel(scenario.model.free_road_accel(v));
    for r in trace.rows.iter().filter(|r| r.zone != Zone::Control) {
        assert!(r.u_star.is_none());
        assert_eq!(r.accels[0], free_road(r.speeds[0]));
    }
}

#[test]
fn collision_returns_partial_trace() {
    let mut config = ScenarioConfig::default();
    config.platoon.n = 2;
    config.bounds.rho = 0.01;
    config.bounds.s0 = 0.5;
    config.bounds.v_min = 0.0;
    config.controller.t_h = 20.0;
    config.init.vehicles = Some(vec![VehicleInit { p: 500.0, v: 10.0 }, VehicleInit { p: 485.0, v: 25.0 }]);
    match run(&config.resolve().unwrap()) {
        Err(SimError::Collision { step, follower, trace, .. }) => {
            assert_eq!(follower, 2);
            assert_eq!(trace.rows.len(), step);
            assert!(trace.summary.aborted.is_some());
        }
        other => panic!("expected a collision, got {other:?}"),
    }
}

#[test]
fn seeded_runs_are_bit_identical_and_seed_sensitive() {
    let csv = |seed: u64| {
        let mut config = ScenarioConfig::default();
        config.cfm.model = CfmKind::Ovm;
        config.controller.t_h = 10.0;
        config.init.seed = seed;
        let mut out = Vec::new();
        run(&config.resolve().unwrap()).unwrap().write_csv(&mut out, 1).unwrap();
        out
    };
    assert_eq!(csv(3), csv(3));
    assert_ne!(csv(3), csv(4));
}
