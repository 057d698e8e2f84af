use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use super::{FleetState, Scenario, VIOLATION_TOL};
use crate::model::{dynamic_spacing, Bounds, VehicleState, Zone};
use crate::mpc::{ConstraintKind, ControlOutcome, RowLayout};
use crate::qp::QpStatus;

/// Bumped whenever the CSV column set or order changes.
pub const TRACE_CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub zone: Zone,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    /// Applied (clamped) accelerations, CAV first.
    pub accels: Vec<f64>,
    /// `headways[i]` is the gap in front of vehicle `i + 2`.
    pub headways: Vec<f64>,
    pub e11: f64,
    pub e12: f64,
    /// Controller's first move before clamping, when the controller ran.
    pub u_star: Option<f64>,
    pub qp_status: Option<String>,
    pub qp_iterations: usize,
    pub qp_objective: Option<f64>,
    pub slack: f64,
    pub active_rows: usize,
    pub active_hard: usize,
    pub fault: Option<ConstraintKind>,
    pub rmse_dp: f64,
    pub rmse_v: f64,
}

impl StepRecord {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn new(
        step: usize,
        time: f64,
        zone: Zone,
        fleet: &FleetState,
        accels: &[f64],
        headways: Vec<f64>,
        control: Option<&ControlOutcome>,
        layout: &RowLayout,
        rmse_dp: f64,
        rmse_v: f64,
    ) -> Self {
        // head-to-tail gap is the sum of the pair gaps
        let e11 = headways.iter().sum();
        let e12 = headways[0];
        Self {
            step,
            time,
            zone,
            positions: fleet.states.iter().map(|s| s.position).collect(),
            speeds: fleet.states.iter().map(|s| s.speed).collect(),
            accels: accels.to_vec(),
            headways,
            e11,
            e12,
            u_star: control.map(|c| c.sequence[0]),
            qp_status: control.map(|c| status_label(&c.status).to_string()),
            qp_iterations: control.map_or(0, |c| c.iterations),
            qp_objective: control.map(|c| c.objective),
            slack: control.map_or(0.0, |c| c.slack),
            active_rows: control.map_or(0, |c| c.active_rows.len()),
            active_hard: control.map_or(0, |c| c.active_count(true, layout)),
            fault: control.and_then(|c| c.fault.map(|f| f.kind)),
            rmse_dp,
            rmse_v,
        }
    }

    pub fn mpc_active(&self) -> bool {
        self.u_star.is_some()
    }
}

fn status_label(status: &QpStatus) -> &'static str {
    match status {
        QpStatus::Optimal => "optimal",
        QpStatus::MaxIter => "max_iter",
        QpStatus::Infeasible { .. } => "infeasible",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    /// Controller first moves outside `[u_min, u_max]`.
    pub input_bound: usize,
    /// Steps with `e11 < (N-1) s0` while the controller is active.
    pub head_to_tail: usize,
    /// Steps with `e12 < s0` while the controller is active.
    pub leader_follower: usize,
    /// Steps with the CAV speed outside `[v_min, v_max]` while the controller is active.
    pub cav_speed: usize,
    /// HDV-steps with a headway below the safe spacing.
    pub rear_end: usize,
    pub scenario_faults: usize,
    pub qp_not_optimal: usize,
}

impl ViolationCounts {
    pub fn hard(&self) -> usize {
        self.input_bound + self.head_to_tail + self.leader_follower
    }

    pub(super) fn tally(&mut self, row: &StepRecord, bounds: &Bounds, n: usize) {
        if let Some(u) = row.u_star {
            if u < bounds.u_min - VIOLATION_TOL || u > bounds.u_max + VIOLATION_TOL {
                self.input_bound += 1;
            }
            if row.e11 < (n - 1) as f64 * bounds.s0 - VIOLATION_TOL {
                self.head_to_tail += 1;
            }
            if row.e12 < bounds.s0 - VIOLATION_TOL {
                self.leader_follower += 1;
            }
            let v = row.speeds[0];
            if v < bounds.v_min - VIOLATION_TOL || v > bounds.v_max + VIOLATION_TOL {
                self.cav_speed += 1;
            }
            if row.fault.is_some() {
                self.scenario_faults += 1;
            }
            if row.qp_status.as_deref() != Some("optimal") {
                self.qp_not_optimal += 1;
            }
        }
        for (i, gap) in row.headways.iter().enumerate() {
            if *gap < dynamic_spacing(row.speeds[i + 1], bounds) - VIOLATION_TOL {
                self.rear_end += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub model: String,
    pub n_vehicles: usize,
    pub tau: f64,
    pub steps: usize,
    pub formed: bool,
    pub formation_step: Option<usize>,
    pub formation_time: Option<f64>,
    pub cav_entry_time: Option<f64>,
    pub cav_exit_time: Option<f64>,
    /// Whether formation happened before the CAV left the control zone.
    pub formed_in_control_zone: Option<bool>,
    pub violations: ViolationCounts,
    pub mean_abs_u_cav: f64,
    pub max_qp_iterations: usize,
    pub final_states: Vec<VehicleState>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub rows: Vec<StepRecord>,
    pub summary: TraceSummary,
}

impl SimulationTrace {
    pub(super) fn finish(
        scenario: &Scenario,
        rows: Vec<StepRecord>,
        violations: ViolationCounts,
        formation_step: Option<usize>,
        aborted: Option<String>,
    ) -> Self {
        let tau = scenario.controller.tau;
        let time_of = |k: usize| k as f64 * tau;
        let cav_entry_time = rows.iter().find(|r| r.zone == Zone::Control).map(|r| r.time);
        let cav_exit_time = rows.iter().find(|r| r.zone == Zone::Exited).map(|r| r.time);
        let mpc: Vec<f64> = rows.iter().filter_map(|r| r.u_star).collect();
        let mean_abs_u_cav = if mpc.is_empty() {
            0.0
        } else {
            mpc.iter().map(|u| u.abs()).sum::<f64>() / mpc.len() as f64
        };
        let final_states = rows
            .last()
            .map(|r| {
                (0..r.positions.len())
                    .map(|i| VehicleState {
                        position: r.positions[i],
                        speed: r.speeds[i],
                        accel: r.accels[i],
                    })
                    .collect()
            })
            .unwrap_or_default();
        let formation_time = formation_step.map(time_of);
        let formed_in_control_zone = formation_time.map(|t| cav_exit_time.is_none_or(|exit| t <= exit));
        let summary = TraceSummary {
            model: scenario.model.name().to_string(),
            n_vehicles: scenario.initial.len(),
            tau,
            steps: rows.len().saturating_sub(1),
            formed: formation_step.is_some(),
            formation_step,
            formation_time,
            cav_entry_time,
            cav_exit_time,
            formed_in_control_zone,
            violations,
            mean_abs_u_cav,
            max_qp_iterations: rows.iter().map(|r| r.qp_iterations).max().unwrap_or(0),
            final_states,
            aborted,
        };
        Self { rows, summary }
    }

    /// CAV inputs from the controller, in step order, with their step index.
    pub fn cav_controls(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.mpc_active())
            .map(|r| (r.step, r.accels[0]))
            .collect()
    }

    pub fn csv_header(n_vehicles: usize) -> String {
        let mut cols: Vec<String> = [
            "step", "time", "zone", "u_star", "qp_status", "qp_iterations", "qp_objective",
            "slack", "active_rows", "active_hard", "fault", "e11", "e12", "rmse_dp", "rmse_v",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 1..=n_vehicles {
            cols.push(format!("p{i}"));
            cols.push(format!("v{i}"));
            cols.push(format!("u{i}"));
        }
        for i in 2..=n_vehicles {
            cols.push(format!("dp{i}"));
        }
        cols.join(",")
    }

    /// Writes every `every`-th row (and always the last one) as CSV.
    pub fn write_csv<W: io::Write>(&self, mut out: W, every: usize) -> io::Result<()> {
        let every = every.max(1);
        writeln!(out, "{}", Self::csv_header(self.summary.n_vehicles))?;
        let last = self.rows.len().saturating_sub(1);
        let mut line = String::new();
        for (idx, r) in self.rows.iter().enumerate() {
            if idx % every != 0 && idx != last {
                continue;
            }
            line.clear();
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = write!(
                line,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.time,
                r.zone.as_str(),
                opt(r.u_star),
                r.qp_status.as_deref().unwrap_or(""),
                r.qp_iterations,
                opt(r.qp_objective),
                r.slack,
                r.active_rows,
                r.active_hard,
                r.fault.map(|f| format!("{f:?}")).unwrap_or_default(),
                r.e11,
                r.e12,
                r.rmse_dp,
                r.rmse_v,
            );
            for i in 0..r.positions.len() {
                let _ = write!(line, ",{},{},{}", r.positions[i], r.speeds[i], r.accels[i]);
            }
            for g in &r.headways {
                let _ = write!(line, ",{g}");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
