use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::prediction::{stack_disturbance, PredictionMatrices, NY};
use super::{AugmentedState, ControllerParams, Disturbance, MpcError};
use crate::model::Bounds;

/// Output reference `[vN, (N-1)(s0 + rho vN), s0 + rho v2]`, held over the horizon.
pub fn reference_output(w: &Disturbance, n_vehicles: usize, bounds: &Bounds) -> [f64; 3] {
    let tail_links = n_vehicles.saturating_sub(1) as f64;
    [
        w.v_n,
        tail_links * (bounds.s0 + bounds.rho * w.v_n),
        bounds.s0 + bounds.rho * w.v_2,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    InputUpper,
    InputLower,
    HeadToTail,
    LeaderFollower,
    SpeedUpper,
    SpeedLower,
    SlackNonNegative,
}

impl ConstraintKind {
    pub fn is_hard(&self) -> bool {
        matches!(
            self,
            ConstraintKind::InputUpper
                | ConstraintKind::InputLower
                | ConstraintKind::HeadToTail
                | ConstraintKind::LeaderFollower
        )
    }
}

/// Row ordering of the inequality block: input upper/lower (`t_c` each),
/// head-to-tail and leader-follower floors (`t_p` each), speed upper/lower
/// (`t_p` each), then the slack sign row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLayout {
    pub t_p: usize,
    pub t_c: usize,
}

impl RowLayout {
    pub fn rows(&self) -> usize {
        2 * self.t_c + 4 * self.t_p + 1
    }

    pub fn decision_len(&self) -> usize {
        self.t_c + 1
    }

    pub fn slack_index(&self) -> usize {
        self.t_c
    }

    fn start(&self, kind: ConstraintKind) -> usize {
        let (c, p) = (self.t_c, self.t_p);
        match kind {
            ConstraintKind::InputUpper => 0,
            ConstraintKind::InputLower => c,
            ConstraintKind::HeadToTail => 2 * c,
            ConstraintKind::LeaderFollower => 2 * c + p,
            ConstraintKind::SpeedUpper => 2 * c + 2 * p,
            ConstraintKind::SpeedLower => 2 * c + 3 * p,
            ConstraintKind::SlackNonNegative => 2 * c + 4 * p,
        }
    }

    pub fn row(&self, kind: ConstraintKind, index: usize) -> usize {
        self.start(kind) + index
    }

    /// Kind of a row and its step index within that block.
    pub fn classify(&self, row: usize) -> (ConstraintKind, usize) {
        use ConstraintKind::*;
        for kind in [SlackNonNegative, SpeedLower, SpeedUpper, LeaderFollower, HeadToTail, InputLower, InputUpper] {
            let s = self.start(kind);
            if row >= s {
                return (kind, row - s);
            }
        }
        unreachable!()
    }
}

/// `min 1/2 z'Hz + f'z + constant  s.t.  A z <= b`, `z = [U; slack]`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub constant: f64,
    pub layout: RowLayout,
}

impl QpProblem {
    pub fn objective_at(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z) + self.constant
    }
}

pub fn assemble_qp(
    x: &AugmentedState,
    w: &Disturbance,
    pred: &PredictionMatrices,
    params: &ControllerParams,
    bounds: &Bounds,
    n_vehicles: usize,
) -> Result<QpProblem, MpcError> {
    if n_vehicles < 2 {
        return Err(MpcError::TooFewVehicles(n_vehicles));
    }
    if pred.t_p != params.t_p || pred.t_c != params.t_c {
        return Err(MpcError::Dimension(format!(
            "prediction built for (T_p, T_c) = ({}, {}), params say ({}, {})",
            pred.t_p, pred.t_c, params.t_p, params.t_c
        )));
    }
    let xv = x.to_vector();
    let wv = w.to_vector();
    if xv.iter().chain(wv.iter()).any(|v| !v.is_finite()) {
        return Err(MpcError::NonFinite("state or disturbance"));
    }
    let (t_p, t_c) = (pred.t_p, pred.t_c);
    let layout = RowLayout { t_p, t_c };
    let n_dec = layout.decision_len();
    let slack = layout.slack_index();

    let free = &pred.c_t * &xv + &pred.dd_t * stack_disturbance(&wv, t_p);
    let y_ref = reference_output(w, n_vehicles, bounds);
    let weights = params.output_weights();
    let q_diag = DVector::from_iterator(NY * t_p, (0..NY * t_p).map(|i| weights[i % NY]));
    let residual = DVector::from_iterator(NY * t_p, (0..NY * t_p).map(|i| free[i] - y_ref[i % NY]));

    // H_uu = Du' Q Du + R, f_u = Du' Q r
    let qdu = DMatrix::from_fn(NY * t_p, t_c, |i, j| q_diag[i] * pred.du_t[(i, j)]);
    let mut h = DMatrix::zeros(n_dec, n_dec);
    let huu = pred.du_t.transpose() * &qdu;
    h.view_mut((0, 0), (t_c, t_c)).copy_from(&huu);
    for m in 0..t_c {
        h[(m, m)] += params.w_r;
    }
    h[(slack, slack)] = 2.0 * params.slack_penalty;
    // exact symmetry
    for i in 0..n_dec {
        for j in 0..i {
            let s = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = s;
            h[(j, i)] = s;
        }
    }
    let mut f = DVector::zeros(n_dec);
    let fu = qdu.transpose() * &residual;
    f.rows_mut(0, t_c).copy_from(&fu);
    let constant = 0.5 * residual.component_mul(&q_diag).dot(&residual);

    let mut a = DMatrix::zeros(layout.rows(), n_dec);
    let mut b = DVector::zeros(layout.rows());
    for m in 0..t_c {
        let r = layout.row(ConstraintKind::InputUpper, m);
        a[(r, m)] = 1.0;
        b[r] = bounds.u_max;
        let r = layout.row(ConstraintKind::InputLower, m);
        a[(r, m)] = -1.0;
        b[r] = -bounds.u_min;
    }
    let tail_floor = (n_vehicles - 1) as f64 * bounds.s0;
    for n in 0..t_p {
        let (iv, ie1, ie2) = (NY * n, NY * n + 1, NY * n + 2);
        // -e11 <= -floor
        let r = layout.row(ConstraintKind::HeadToTail, n);
        for m in 0..t_c {
            a[(r, m)] = -pred.du_t[(ie1, m)];
        }
        b[r] = free[ie1] - tail_floor;
        let r = layout.row(ConstraintKind::LeaderFollower, n);
        for m in 0..t_c {
            a[(r, m)] = -pred.du_t[(ie2, m)];
        }
        b[r] = free[ie2] - bounds.s0;
        // v - slack <= v_max ; -v - slack <= -v_min
        let r = layout.row(ConstraintKind::SpeedUpper, n);
        for m in 0..t_c {
            a[(r, m)] = pred.du_t[(iv, m)];
        }
        a[(r, slack)] = -1.0;
        b[r] = bounds.v_max - free[iv];
        let r = layout.row(ConstraintKind::SpeedLower, n);
        for m in 0..t_c {
            a[(r, m)] = -pred.du_t[(iv, m)];
        }
        a[(r, slack)] = -1.0;
        b[r] = free[iv] - bounds.v_min;
    }
    let r = layout.row(ConstraintKind::SlackNonNegative, 0);
    a[(r, slack)] = -1.0;

    if h.iter().chain(f.iter()).chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(MpcError::NonFinite("assembled QP"));
    }
    Ok(QpProblem {
        h,
        f,
        a,
        b,
        constant,
        layout,
    })
}

/// Direct evaluation of the tracking-plus-effort cost from the predicted
/// outputs, plus the slack penalty.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_objective(
    pred: &PredictionMatrices,
    x: &AugmentedState,
    w: &Disturbance,
    controls: &DVector<f64>,
    slack: f64,
    params: &ControllerParams,
    bounds: &Bounds,
    n_vehicles: usize,
) -> f64 {
    let y = pred.predict_outputs(
        &x.to_vector(),
        controls,
        &stack_disturbance(&w.to_vector(), pred.t_p),
    );
    let y_ref = reference_output(w, n_vehicles, bounds);
    let weights = params.output_weights();
    let tracking: f64 = (0..y.len())
        .map(|i| {
            let e = y[i] - y_ref[i % NY];
            weights[i % NY] * e * e
        })
        .sum();
    let effort: f64 = controls.iter().map(|u| params.w_r * u * u).sum();
    0.5 * tracking + 0.5 * effort + params.slack_penalty * slack * slack
}
