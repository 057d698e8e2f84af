//! Receding-horizon controller for the lead CAV.
//!
//! The controller sees the CAV's own state plus the speeds of the first and
//! last trailing HDVs, predicts the augmented state over the horizon with the
//! HDV speeds held constant, and solves a condensed QP in the control moves
//! and one speed slack. Only the first move is applied.

mod controller;
pub mod prediction;
mod problem;

pub use controller::{ControlOutcome, Controller, ScenarioFault};
pub use prediction::{build_prediction, build_system_matrices, PredictionMatrices, SystemMatrices};
pub use problem::{
    assemble_qp, evaluate_objective, reference_output, ConstraintKind, QpProblem, RowLayout,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::qp::QpError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("controller needs at least two vehicles, got {0}")]
    TooFewVehicles(usize),
    #[error("invalid controller parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Positions and speeds of the whole fleet, CAV first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationSet {
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl InformationSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `[p1, v1, e11, e12]`: CAV position and speed, head-to-tail gap and
/// leader-follower gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub p1: f64,
    pub v1: f64,
    pub e11: f64,
    pub e12: f64,
}

impl AugmentedState {
    pub fn from_info(info: &InformationSet, veh_len: f64) -> Result<Self, MpcError> {
        let n = info.len();
        if n < 2 || info.speeds.len() != n {
            return Err(MpcError::TooFewVehicles(n.min(info.speeds.len())));
        }
        let p1 = info.positions[0];
        Ok(Self {
            p1,
            v1: info.speeds[0],
            e11: p1 - info.positions[n - 1] - (n - 1) as f64 * veh_len,
            e12: p1 - info.positions[1] - veh_len,
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.p1, self.v1, self.e11, self.e12])
    }
}

/// Speeds of the last and the first trailing HDV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub v_n: f64,
    pub v_2: f64,
}

impl Disturbance {
    pub fn from_info(info: &InformationSet) -> Result<Self, MpcError> {
        let n = info.speeds.len();
        if n < 2 {
            return Err(MpcError::TooFewVehicles(n));
        }
        Ok(Self {
            v_n: info.speeds[n - 1],
            v_2: info.speeds[1],
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.v_n, self.v_2])
    }
}

/// Controller tuning with horizons already expressed in steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub t_p: usize,
    pub t_c: usize,
    pub t_h: usize,
    pub tau: f64,
    pub q_v: f64,
    pub q_e1: f64,
    pub q_e2: f64,
    pub w_r: f64,
    pub slack_penalty: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            t_p: 100,
            t_c: 20,
            t_h: 650,
            tau: 0.1,
            q_v: 0.2,
            q_e1: 0.0,
            q_e2: 0.0,
            w_r: 5.0,
            slack_penalty: 1e5,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |field: &'static str, reason: &str| {
            Err(MpcError::InvalidParam {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau", "sample time must be positive");
        }
        if self.t_p == 0 {
            return bad("T_p", "prediction horizon must be at least one step");
        }
        if self.t_c == 0 {
            return bad("T_c", "control horizon must be at least one step");
        }
        if self.t_c > self.t_p {
            return bad("T_c", "control horizon exceeds prediction horizon");
        }
        if self.t_h == 0 {
            return bad("T_h", "optimization horizon must be at least one step");
        }
        for (field, w) in [("q_v", self.q_v), ("q_e1", self.q_e1), ("q_e2", self.q_e2)] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(field, "output weights must be non-negative");
            }
        }
        if !(self.w_r.is_finite() && self.w_r > 0.0) {
            return bad("w_r", "input weight must be positive");
        }
        if !(self.slack_penalty.is_finite() && self.slack_penalty > 0.0) {
            return bad("slack_penalty", "must be positive");
        }
        Ok(())
    }

    pub fn output_weights(&self) -> [f64; 3] {
        [self.q_v, self.q_e1, self.q_e2]
    }
}
