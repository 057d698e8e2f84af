//! Car-following models for the human-driven vehicles.
//!
//! Every model maps `(gap, approach rate, own speed)` to an acceleration. The
//! approach rate is leader speed minus follower speed, so a positive value
//! means the gap is opening. Outputs are *not* clamped here; the simulator
//! clamps to the input bounds so derivative checks see the raw model.

pub mod eligibility;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CfmError {
    #[error("car-following model evaluated at non-positive gap {0} m")]
    NonPositiveGap(f64),
    #[error("probe point is not an equilibrium: |f| = {residual:e} exceeds {tol:e}")]
    NotEquilibrium { residual: f64, tol: f64 },
    #[error("no equilibrium gap exists at speed {0} m/s")]
    NoEquilibrium(f64),
    #[error("speed derivative {0:e} too close to zero for the string-stability test")]
    DegenerateSpeedDerivative(f64),
    #[error("invalid model parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

/// Arguments of the behavioral function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfmInput {
    pub delta_p: f64,
    pub delta_v: f64,
    pub v: f64,
}

impl CfmInput {
    pub fn new(delta_p: f64, delta_v: f64, v: f64) -> Self {
        Self { delta_p, delta_v, v }
    }
}

/// Optimal velocity model with a tanh equilibrium speed-headway function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvmParams {
    /// Driver sensitivity (1/s).
    pub alpha: f64,
    pub v_d: f64,
    pub rho: f64,
    pub s0: f64,
}

impl Default for OvmParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            v_d: 30.0,
            rho: 1.5,
            s0: 2.0,
        }
    }
}

/// Desired-gap denominator variant for the intelligent driver model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdmGapForm {
    /// `v * dv / (2 sqrt(a b))`, the usual literature form.
    #[default]
    SqrtAb,
    /// `v * dv / (2 a b)`.
    ProductAb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub v_d: f64,
    pub rho: f64,
    pub s0: f64,
    #[serde(default)]
    pub gap_form: IdmGapForm,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 3.0,
            gamma: 4.0,
            v_d: 30.0,
            rho: 1.5,
            s0: 2.0,
            gap_form: IdmGapForm::SqrtAb,
        }
    }
}

impl OvmParams {
    pub fn validate(&self) -> Result<(), CfmError> {
        positive("alpha", self.alpha)?;
        positive("v_d", self.v_d)?;
        positive("rho", self.rho)?;
        positive("s0", self.s0)
    }

    fn spacing(&self, v: f64) -> f64 {
        self.rho * v + self.s0
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), CfmError> {
        positive("a", self.a)?;
        positive("b", self.b)?;
        positive("v_d", self.v_d)?;
        positive("rho", self.rho)?;
        positive("s0", self.s0)?;
        if !(self.gamma >= 1.0) {
            return Err(CfmError::InvalidParam {
                field: "gamma",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn brake_denominator(&self) -> f64 {
        match self.gap_form {
            IdmGapForm::SqrtAb => 2.0 * (self.a * self.b).sqrt(),
            IdmGapForm::ProductAb => 2.0 * self.a * self.b,
        }
    }

    /// Desired gap. The dynamic part is floored at zero so a quickly
    /// receding leader never shrinks the target below the standstill gap.
    pub fn desired_gap(&self, v: f64, delta_v: f64) -> f64 {
        let dynamic = self.rho * v - v * delta_v / self.brake_denominator();
        self.s0 + dynamic.max(0.0)
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), CfmError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CfmError::InvalidParam {
            field,
            reason: format!("must be finite and positive, got {value}"),
        })
    }
}

/// `alpha * (V - v)` with `V = v_d/2 * (tanh(gap - s) + tanh(s))`, `s = rho v + s0`.
pub fn ovm_accel(input: &CfmInput, params: &OvmParams) -> f64 {
    let s = params.spacing(input.v);
    let delta = input.delta_p - s;
    let optimal = 0.5 * params.v_d * (delta.tanh() + s.tanh());
    params.alpha * (optimal - input.v)
}

pub fn idm_accel(input: &CfmInput, params: &IdmParams) -> Result<f64, CfmError> {
    if !(input.delta_p > 0.0) {
        return Err(CfmError::NonPositiveGap(input.delta_p));
    }
    let free = (input.v / params.v_d).powf(params.gamma);
    let ratio = params.desired_gap(input.v, input.delta_v) / input.delta_p;
    Ok(params.a * (1.0 - free - ratio * ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CarFollowingModel {
    Ovm(OvmParams),
    Idm(IdmParams),
}

impl CarFollowingModel {
    pub fn name(&self) -> &'static str {
        match self {
            CarFollowingModel::Ovm(_) => "ovm",
            CarFollowingModel::Idm(_) => "idm",
        }
    }

    pub fn validate(&self) -> Result<(), CfmError> {
        match self {
            CarFollowingModel::Ovm(p) => p.validate(),
            CarFollowingModel::Idm(p) => p.validate(),
        }
    }

    pub fn accel(&self, input: &CfmInput) -> Result<f64, CfmError> {
        if !(input.delta_p > 0.0) {
            return Err(CfmError::NonPositiveGap(input.delta_p));
        }
        match self {
            CarFollowingModel::Ovm(p) => Ok(ovm_accel(input, p)),
            CarFollowingModel::Idm(p) => idm_accel(input, p),
        }
    }

    /// Acceleration with no vehicle ahead (infinite gap, zero approach rate).
    pub fn free_road_accel(&self, v: f64) -> f64 {
        match self {
            CarFollowingModel::Ovm(p) => {
                p.alpha * (0.5 * p.v_d * (1.0 + p.spacing(v).tanh()) - v)
            }
            CarFollowingModel::Idm(p) => p.a * (1.0 - (v / p.v_d).powf(p.gamma)),
        }
    }

    /// Gap at which a follower cruising at `v` behind a leader at the same
    /// speed has zero acceleration. Bisection on the gap to 1e-10 m.
    pub fn equilibrium_gap(&self, v: f64) -> Result<f64, CfmError> {
        let f = |gap: f64| self.accel(&CfmInput::new(gap, 0.0, v));
        let mut lo = 1e-9;
        if f(lo)? > 0.0 {
            return Err(CfmError::NoEquilibrium(v));
        }
        let mut hi = 10.0;
        while f(hi)? <= 0.0 {
            hi *= 2.0;
            if hi > 1e7 {
                return Err(CfmError::NoEquilibrium(v));
            }
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid)? > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}
