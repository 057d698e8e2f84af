use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::prediction::{build_prediction, build_system_matrices, PredictionMatrices};
use super::problem::{assemble_qp, ConstraintKind, QpProblem};
use super::{AugmentedState, ControllerParams, Disturbance, InformationSet, MpcError};
use crate::model::Bounds;
use crate::qp::{solve_warm, QpOptions, QpStatus};

/// A hard constraint that no admissible input sequence can satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFault {
    pub row: usize,
    pub kind: ConstraintKind,
    /// Step within the horizon (or control move index) of the violated row.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub u_star: f64,
    pub sequence: Vec<f64>,
    pub slack: f64,
    /// Cost at the returned sequence, including the slack penalty.
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    pub active_rows: Vec<usize>,
    pub fault: Option<ScenarioFault>,
}

impl ControlOutcome {
    pub fn active_count(&self, hard_only: bool, layout: &super::RowLayout) -> usize {
        self.active_rows
            .iter()
            .filter(|&&r| !hard_only || layout.classify(r).0.is_hard())
            .count()
    }
}

/// One CAV's receding-horizon controller. Holds the prediction operators
/// and the previous active set for warm starts.
#[derive(Debug, Clone)]
pub struct Controller {
    params: ControllerParams,
    bounds: Bounds,
    pred: PredictionMatrices,
    opts: QpOptions,
    warm: Vec<usize>,
}

impl Controller {
    pub fn new(params: ControllerParams, bounds: Bounds) -> Result<Self, MpcError> {
        params.validate()?;
        bounds.validate()?;
        let pred = build_prediction(&build_system_matrices(params.tau), params.t_p, params.t_c)?;
        Ok(Self {
            params,
            bounds,
            pred,
            opts: QpOptions::default(),
            warm: Vec::new(),
        })
    }

    pub fn with_options(mut self, opts: QpOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn prediction(&self) -> &PredictionMatrices {
        &self.pred
    }

    pub fn reset_warm_start(&mut self) {
        self.warm.clear();
    }

    pub fn build_problem(&self, info: &InformationSet) -> Result<(AugmentedState, Disturbance, QpProblem), MpcError> {
        let x = AugmentedState::from_info(info, self.bounds.veh_len)?;
        let w = Disturbance::from_info(info)?;
        let qp = assemble_qp(&x, &w, &self.pred, &self.params, &self.bounds, info.len())?;
        Ok((x, w, qp))
    }

    /// Solves the horizon problem for the current snapshot and returns the
    /// first move. When the hard rows are jointly infeasible the controller
    /// brakes at `u_min` and reports the offending row.
    pub fn control_step(&mut self, info: &InformationSet) -> Result<ControlOutcome, MpcError> {
        let (_, _, qp) = self.build_problem(info)?;
        let sol = solve_warm(&qp.h, &qp.f, &qp.a, &qp.b, &self.opts, &self.warm)?;
        let layout = qp.layout;
        let t_c = layout.t_c;

        if let QpStatus::Infeasible { row } = sol.status {
            self.warm.clear();
            let (kind, step) = layout.classify(row);
            log::debug!("hard constraint {kind:?} at step {step} infeasible; braking");
            let mut sequence = vec![0.0; t_c];
            sequence[0] = self.bounds.u_min;
            let mut z = DVector::zeros(layout.decision_len());
            z[0] = self.bounds.u_min;
            return Ok(ControlOutcome {
                u_star: self.bounds.u_min,
                sequence,
                slack: 0.0,
                objective: qp.objective_at(&z),
                iterations: sol.iterations,
                status: sol.status,
                active_rows: Vec::new(),
                fault: Some(ScenarioFault { row, kind, step }),
            });
        }

        self.warm = sol.active.clone();
        let sequence: Vec<f64> = sol.z.rows(0, t_c).iter().copied().collect();
        Ok(ControlOutcome {
            u_star: self.bounds.clamp_accel(sequence[0]),
            sequence,
            slack: sol.z[layout.slack_index()],
            objective: sol.objective + qp.constant,
            iterations: sol.iterations,
            status: sol.status,
            active_rows: sol.active,
            fault: None,
        })
    }
}
