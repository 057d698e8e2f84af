//! Closed-loop simulation of the CAV and its trailing HDVs.
//!
//! Each step takes a perfect snapshot of the fleet, computes every vehicle's
//! acceleration from that same snapshot, and then advances all vehicles
//! together. The CAV runs the receding-horizon controller only while its
//! front bumper is inside the control zone; elsewhere it drives like an
//! unobstructed HDV.

pub mod detector;
mod trace;

pub use detector::{detect_formation, formation_rmse, FormationCriteria, FormationDetector};
pub use trace::{SimulationTrace, StepRecord, TraceSummary, ViolationCounts, TRACE_CSV_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfm::{CarFollowingModel, CfmError, CfmInput};
use crate::model::{
    approach_rate, dynamic_spacing, euler_step, headway, Bounds, ModelError, RoadGeometry,
    VehicleState, Zone,
};
use crate::mpc::{Controller, ControllerParams, InformationSet, MpcError};

/// Tolerance used when counting bound violations in a finished trace.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("collision between vehicles {follower} and {leader} at step {step} (headway {headway:.3} m)")]
    Collision {
        step: usize,
        leader: usize,
        follower: usize,
        headway: f64,
        trace: Box<SimulationTrace>,
    },
    #[error(transparent)]
    Controller(#[from] MpcError),
    #[error(transparent)]
    Model(#[from] CfmError),
}

/// Fully resolved scenario: explicit initial states, horizons in steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: RoadGeometry,
    pub bounds: Bounds,
    pub model: CarFollowingModel,
    pub controller: ControllerParams,
    pub criteria: FormationCriteria,
    /// CAV first, then HDVs in order.
    pub initial: Vec<VehicleState>,
}

/// Ordered fleet: index 0 is the CAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub states: Vec<VehicleState>,
    pub step: usize,
    pub time: f64,
}

impl FleetState {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn headways(&self, veh_len: f64) -> Result<Vec<f64>, ModelError> {
        self.states
            .windows(2)
            .map(|pair| headway(&pair[0], &pair[1], veh_len))
            .collect()
    }
}

/// What the coordinator hands the CAV: exact positions and speeds.
pub fn coordinator_snapshot(fleet: &FleetState) -> InformationSet {
    InformationSet {
        positions: fleet.states.iter().map(|s| s.position).collect(),
        speeds: fleet.states.iter().map(|s| s.speed).collect(),
    }
}

/// Accelerations of every HDV (indices `1..N`) from one snapshot, clamped.
pub fn hdv_accelerations(
    fleet: &FleetState,
    model: &CarFollowingModel,
    bounds: &Bounds,
) -> Result<Vec<f64>, SimError> {
    fleet
        .states
        .windows(2)
        .map(|pair| {
            let (leader, follower) = (&pair[0], &pair[1]);
            let gap = leader.position - follower.position - bounds.veh_len;
            let input = CfmInput::new(gap, approach_rate(leader, follower), follower.speed);
            Ok(bounds.clamp_accel(model.accel(&input)?))
        })
        .collect()
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| SimError::Invalid(m);
        self.geometry.validate().map_err(|e| err(e.to_string()))?;
        self.bounds.validate().map_err(|e| err(e.to_string()))?;
        self.model.validate().map_err(|e| err(e.to_string()))?;
        self.controller.validate().map_err(|e| err(e.to_string()))?;
        self.criteria.validate().map_err(err)?;
        if self.initial.len() < 2 {
            return Err(err(format!("need at least 2 vehicles, got {}", self.initial.len())));
        }
        check_initial_conditions(&self.initial, &self.bounds)
            .map_err(err)
    }

    pub fn steps(&self) -> usize {
        self.controller.t_h
    }
}

/// Speeds strictly inside the speed bounds and every HDV at or beyond its
/// safe spacing: no constraint is active at the start.
pub fn check_initial_conditions(initial: &[VehicleState], bounds: &Bounds) -> Result<(), String> {
    for (i, s) in initial.iter().enumerate() {
        if !(s.position.is_finite() && s.speed.is_finite()) {
            return Err(format!("vehicle {} has a non-finite state", i + 1));
        }
        if !(s.speed > bounds.v_min && s.speed < bounds.v_max) {
            return Err(format!(
                "vehicle {} starts at {} m/s, outside the open speed range ({}, {})",
                i + 1,
                s.speed,
                bounds.v_min,
                bounds.v_max
            ));
        }
    }
    for (i, pair) in initial.windows(2).enumerate() {
        let gap = headway(&pair[0], &pair[1], bounds.veh_len).map_err(|e| e.to_string())?;
        let safe = dynamic_spacing(pair[1].speed, bounds);
        if gap < safe {
            return Err(format!(
                "rear-end constraint violated at start: vehicle {} headway {gap:.3} m < safe spacing {safe:.3} m",
                i + 2
            ));
        }
    }
    Ok(())
}

pub fn run(scenario: &Scenario) -> Result<SimulationTrace, SimError> {
    scenario.validate()?;
    let bounds = scenario.bounds;
    let n = scenario.initial.len();
    let mut controller = Controller::new(scenario.controller, bounds)?;
    let layout = crate::mpc::RowLayout {
        t_p: scenario.controller.t_p,
        t_c: scenario.controller.t_c,
    };
    let tau = scenario.controller.tau;
    let steps = scenario.steps();

    let mut fleet = FleetState {
        states: scenario.initial.clone(),
        step: 0,
        time: 0.0,
    };
    let mut detector = FormationDetector::new(scenario.criteria);
    let mut rows = Vec::with_capacity(steps + 1);
    let mut violations = ViolationCounts::default();

    for k in 0..=steps {
        fleet.step = k;
        fleet.time = k as f64 * tau;
        let info = coordinator_snapshot(&fleet);
        let zone = scenario.geometry.zone_of(fleet.states[0].position);

        let mut accels = Vec::with_capacity(n);
        let mut control = None;
        if zone == Zone::Control {
            let out = controller.control_step(&info)?;
            accels.push(out.u_star);
            control = Some(out);
        } else {
            controller.reset_warm_start();
            accels.push(bounds.clamp_accel(scenario.model.free_road_accel(fleet.states[0].speed)));
        }
        accels.extend(hdv_accelerations(&fleet, &scenario.model, &bounds)?);

        let headways: Vec<f64> = fleet
            .states
            .windows(2)
            .map(|p| p[0].position - p[1].position - bounds.veh_len)
            .collect();
        let (rmse_dp, rmse_v) = formation_rmse(&fleet, bounds.veh_len);
        detector.update(k, rmse_dp, rmse_v);
        let record = StepRecord::new(k, fleet.time, zone, &fleet, &accels, headways, control.as_ref(), &layout, rmse_dp, rmse_v);
        violations.tally(&record, &bounds, n);
        rows.push(record);

        if k == steps {
            break;
        }
        for (state, &u) in fleet.states.iter_mut().zip(&accels) {
            *state = euler_step(state, u, tau, &bounds);
        }
        if let Some((i, gap)) = fleet
            .states
            .windows(2)
            .map(|p| p[0].position - p[1].position - bounds.veh_len)
            .enumerate()
            .find(|(_, g)| !(*g > 0.0))
        {
            let trace = SimulationTrace::finish(scenario, rows, violations, detector.formed_at(), Some(format!("collision at step {}", k + 1)));
            return Err(SimError::Collision {
                step: k + 1,
                leader: i + 1,
                follower: i + 2,
                headway: gap,
                trace: Box::new(trace),
            });
        }
    }

    Ok(SimulationTrace::finish(scenario, rows, violations, detector.formed_at(), None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfm::{IdmParams, OvmParams};

    fn equilibrium_scenario(model: CarFollowingModel, v: f64, n: usize) -> Scenario {
        let bounds = Bounds::default();
        let gap = model.equilibrium_gap(v).unwrap();
        let initial = (0..n)
            .map(|i| VehicleState::new(500.0 - i as f64 * (gap + bounds.veh_len), v))
            .collect();
        Scenario {
            geometry: RoadGeometry::new(500.0, 1500.0).unwrap(),
            bounds,
            model,
            controller: ControllerParams {
                t_h: 100,
                ..ControllerParams::default()
            },
            criteria: FormationCriteria::default(),
            initial,
        }
    }

    #[test]
    fn formed_platoon_stays_put() {
        for model in [
            CarFollowingModel::Idm(IdmParams::default()),
            CarFollowingModel::Ovm(OvmParams::default()),
        ] {
            let sc = equilibrium_scenario(model, 24.0, 4);
            let trace = run(&sc).unwrap();
            assert_eq!(trace.rows.len(), 101);
            assert_eq!(trace.summary.formation_step, Some(0));
            for row in &trace.rows {
                assert!(row.accels.iter().all(|u| u.abs() < 1e-6), "{:?}", row.accels);
            }
        }
    }

    #[test]
    fn snapshot_is_exact_and_consistent_with_dynamics() {
        let sc = equilibrium_scenario(CarFollowingModel::Idm(IdmParams::default()), 20.0, 3);
        let fleet = FleetState {
            states: sc.initial.clone(),
            step: 0,
            time: 0.0,
        };
        let info = coordinator_snapshot(&fleet);
        assert_eq!(info.positions, sc.initial.iter().map(|s| s.position).collect::<Vec<_>>());
        let us = [-1.0, 0.5, 1.5];
        let next: Vec<VehicleState> = fleet
            .states
            .iter()
            .zip(us)
            .map(|(s, u)| euler_step(s, u, 0.1, &sc.bounds))
            .collect();
        let info2 = coordinator_snapshot(&FleetState { states: next, step: 1, time: 0.1 });
        for (i, u) in us.iter().enumerate() {
            assert!((info2.speeds[i] - info.speeds[i] - 0.1 * u).abs() < 1e-12);
        }
    }

    #[test]
    fn lone_cav_is_rejected() {
        let mut sc = equilibrium_scenario(CarFollowingModel::Idm(IdmParams::default()), 20.0, 2);
        sc.initial.truncate(1);
        assert!(matches!(run(&sc), Err(SimError::Invalid(_))));
    }

    #[test]
    fn initial_rear_end_violation_is_rejected() {
        let mut sc = equilibrium_scenario(CarFollowingModel::Idm(IdmParams::default()), 20.0, 3);
        sc.initial[1].position = sc.initial[0].position - 20.0;
        let err = run(&sc).unwrap_err();
        assert!(err.to_string().contains("rear-end"), "{err}");
    }

    #[test]
    fn hdv_update_uses_one_snapshot() {
        // accelerations do not depend on the order in which vehicles are evaluated
        let sc = equilibrium_scenario(CarFollowingModel::Ovm(OvmParams::default()), 22.0, 5);
        let mut fleet = FleetState { states: sc.initial.clone(), step: 0, time: 0.0 };
        fleet.states[2].speed += 1.5;
        fleet.states[3].position -= 4.0;
        let forward = hdv_accelerations(&fleet, &sc.model, &sc.bounds).unwrap();
        let reversed: Vec<f64> = {
            let mut out = Vec::new();
            for i in (1..fleet.len()).rev() {
                let pair = [fleet.states[i - 1], fleet.states[i]];
                let input = CfmInput::new(
                    pair[0].position - pair[1].position - sc.bounds.veh_len,
                    pair[0].speed - pair[1].speed,
                    pair[1].speed,
                );
                out.push(sc.bounds.clamp_accel(sc.model.accel(&input).unwrap()));
            }
            out.reverse();
            out
        };
        assert_eq!(forward, reversed);
    }

    #[test]
    fn translation_invariant_accelerations() {
        let sc = equilibrium_scenario(CarFollowingModel::Idm(IdmParams::default()), 21.0, 4);
        let mut fleet = FleetState { states: sc.initial.clone(), step: 0, time: 0.0 };
        fleet.states[1].speed -= 2.0;
        let base = hdv_accelerations(&fleet, &sc.model, &sc.bounds).unwrap();
        for s in fleet.states.iter_mut() {
            s.position += 1234.5;
        }
        let shifted = hdv_accelerations(&fleet, &sc.model, &sc.bounds).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
