//! Declarative scenario files.
//!
//! Keys follow the symbols of the parameter tables (`L_b`, `T_p`, `w_r`, ...).
//! Every field is optional; omitted ones take the table defaults. Horizons
//! are given in seconds and converted to whole steps by rounding `T / tau` to
//! the nearest integer.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfm::{CarFollowingModel, IdmGapForm, IdmParams, OvmParams};
use crate::model::{dynamic_spacing, Bounds, RoadGeometry, VehicleState};
use crate::mpc::ControllerParams;
use crate::sim::{FormationCriteria, Scenario, SimError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(rename = "L_b")]
    pub buffer_len: f64,
    #[serde(rename = "L_c")]
    pub control_len: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            buffer_len: 500.0,
            control_len: 1500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub rho: f64,
    pub s0: f64,
    pub l_c: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let b = Bounds::default();
        Self {
            v_min: b.v_min,
            v_max: b.v_max,
            u_min: b.u_min,
            u_max: b.u_max,
            rho: b.rho,
            s0: b.s0,
            l_c: b.veh_len,
        }
    }
}

impl BoundsConfig {
    pub fn to_bounds(&self) -> Bounds {
        Bounds {
            v_min: self.v_min,
            v_max: self.v_max,
            u_min: self.u_min,
            u_max: self.u_max,
            rho: self.rho,
            s0: self.s0,
            veh_len: self.l_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfmKind {
    Ovm,
    #[default]
    Idm,
}

/// Parameters for both models; only those of the selected model are used.
/// `rho` and `s0` are shared with the bounds section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfmConfig {
    pub model: CfmKind,
    pub alpha: f64,
    pub v_d: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub gap_form: IdmGapForm,
}

impl Default for CfmConfig {
    fn default() -> Self {
        let o = OvmParams::default();
        let i = IdmParams::default();
        Self {
            model: CfmKind::default(),
            alpha: o.alpha,
            v_d: i.v_d,
            a: i.a,
            b: i.b,
            gamma: i.gamma,
            gap_form: i.gap_form,
        }
    }
}

impl CfmConfig {
    pub fn to_model(&self, bounds: &Bounds) -> CarFollowingModel {
        match self.model {
            CfmKind::Ovm => CarFollowingModel::Ovm(OvmParams {
                alpha: self.alpha,
                v_d: self.v_d,
                rho: bounds.rho,
                s0: bounds.s0,
            }),
            CfmKind::Idm => CarFollowingModel::Idm(IdmParams {
                a: self.a,
                b: self.b,
                gamma: self.gamma,
                v_d: self.v_d,
                rho: bounds.rho,
                s0: bounds.s0,
                gap_form: self.gap_form,
            }),
        }
    }
}

/// Horizons in seconds; `Q` is the diagonal `[q_v, q_e1, q_e2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(rename = "T_h")]
    pub t_h: f64,
    #[serde(rename = "T_p")]
    pub t_p: f64,
    #[serde(rename = "T_c")]
    pub t_c: f64,
    pub tau: f64,
    pub w_r: f64,
    #[serde(rename = "Q")]
    pub q: [f64; 3],
    pub slack_penalty: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let p = ControllerParams::default();
        Self {
            t_h: 65.0,
            t_p: 10.0,
            t_c: 2.0,
            tau: p.tau,
            w_r: p.w_r,
            q: [p.q_v, p.q_e1, p.q_e2],
            slack_penalty: p.slack_penalty,
        }
    }
}

/// Converts a duration to whole steps, rounding to nearest.
pub fn seconds_to_steps(field: &str, seconds: f64, tau: f64) -> Result<usize, ConfigError> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(invalid(field, format!("must be a positive duration, got {seconds}")));
    }
    let steps = (seconds / tau).round();
    if steps < 1.0 {
        return Err(invalid(field, format!("{seconds} s is shorter than one step of {tau} s")));
    }
    Ok(steps as usize)
}

impl ControllerConfig {
    pub fn to_params(&self) -> Result<ControllerParams, ConfigError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid("tau", "must be positive"));
        }
        let params = ControllerParams {
            t_p: seconds_to_steps("T_p", self.t_p, self.tau)?,
            t_c: seconds_to_steps("T_c", self.t_c, self.tau)?,
            t_h: seconds_to_steps("T_h", self.t_h, self.tau)?,
            tau: self.tau,
            q_v: self.q[0],
            q_e1: self.q[1],
            q_e2: self.q[2],
            w_r: self.w_r,
            slack_penalty: self.slack_penalty,
        };
        params.validate().map_err(|e| match e {
            crate::mpc::MpcError::InvalidParam { field, reason } => invalid(field, reason),
            other => invalid("controller", other.to_string()),
        })?;
        Ok(params)
    }
}

/// How the nominal gap behind each vehicle is chosen before the random margin is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapBase {
    /// The safe spacing `rho v + s0`.
    Spacing,
    /// The larger of the safe spacing and the car-following equilibrium gap.
    #[default]
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleInit {
    pub p: f64,
    pub v: f64,
}

/// Either explicit per-vehicle states or a seeded draw. Bands are closed
/// intervals `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub seed: u64,
    /// CAV front position; defaults to the control-zone entry.
    pub cav_position: Option<f64>,
    pub cav_speed: [f64; 2],
    pub hdv_speed: [f64; 2],
    pub gap_margin: [f64; 2],
    pub gap_base: GapBase,
    /// CAV first; overrides the seeded draw when present.
    pub vehicles: Option<Vec<VehicleInit>>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            cav_position: None,
            cav_speed: [28.0, 29.0],
            hdv_speed: [21.0, 24.0],
            gap_margin: [0.0, 1.0],
            gap_base: GapBase::Equilibrium,
            vehicles: None,
        }
    }
}

fn check_band(field: &str, band: [f64; 2]) -> Result<(), ConfigError> {
    if !(band[0].is_finite() && band[1].is_finite() && band[0] <= band[1]) {
        return Err(invalid(field, format!("expected [lo, hi] with lo <= hi, got {band:?}")));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, band: [f64; 2]) -> f64 {
    if band[0] == band[1] {
        band[0]
    } else {
        rng.gen_range(band[0]..=band[1])
    }
}

impl InitConfig {
    pub fn generate(
        &self,
        n: usize,
        geometry: &RoadGeometry,
        bounds: &Bounds,
        model: &CarFollowingModel,
    ) -> Result<Vec<VehicleState>, ConfigError> {
        if let Some(vehicles) = &self.vehicles {
            if vehicles.len() != n {
                return Err(invalid(
                    "init.vehicles",
                    format!("lists {} vehicles but N = {n}", vehicles.len()),
                ));
            }
            return Ok(vehicles.iter().map(|v| VehicleState::new(v.p, v.v)).collect());
        }
        check_band("init.cav_speed", self.cav_speed)?;
        check_band("init.hdv_speed", self.hdv_speed)?;
        check_band("init.gap_margin", self.gap_margin)?;
        if self.gap_margin[0] < 0.0 {
            return Err(invalid("init.gap_margin", "margins must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cav_position = self.cav_position.unwrap_or_else(|| geometry.control_entry());
        let mut states = vec![VehicleState::new(cav_position, draw(&mut rng, self.cav_speed))];
        for _ in 1..n {
            let v = draw(&mut rng, self.hdv_speed);
            let margin = draw(&mut rng, self.gap_margin);
            let spacing = dynamic_spacing(v, bounds);
            let base = match self.gap_base {
                GapBase::Spacing => spacing,
                GapBase::Equilibrium => model
                    .equilibrium_gap(v)
                    .map_err(|e| invalid("init.hdv_speed", e.to_string()))?
                    .max(spacing),
            };
            let leader = states.last().map_or(cav_position, |s| s.position);
            states.push(VehicleState::new(leader - bounds.veh_len - base - margin, v));
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub format: OutputFormat,
    /// Keep every n-th trace row; 0 and 1 keep all.
    pub downsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonConfig {
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        Self { n: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometryConfig,
    pub bounds: BoundsConfig,
    pub platoon: PlatoonConfig,
    pub cfm: CfmConfig,
    pub controller: ControllerConfig,
    pub criteria: FormationCriteria,
    pub init: InitConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.resolve()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Validates every section and produces the simulation input.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let geometry = RoadGeometry::new(self.geometry.buffer_len, self.geometry.control_len)
            .map_err(|e| model_error("geometry", e))?;
        let bounds = self.bounds.to_bounds();
        bounds.validate().map_err(|e| model_error("bounds", e))?;
        if self.platoon.n < 2 {
            return Err(invalid("N", format!("need at least 2 vehicles, got {}", self.platoon.n)));
        }
        let model = self.cfm.to_model(&bounds);
        model.validate().map_err(|e| invalid("cfm", e.to_string()))?;
        if let CarFollowingModel::Idm(p) = &model {
            if p.gap_form == IdmGapForm::ProductAb {
                log::warn!("IDM desired gap uses the 2ab denominator; dimensions do not match the usual form");
            }
        }
        let controller = self.controller.to_params()?;
        self.criteria
            .validate()
            .map_err(|reason| invalid("criteria", reason))?;
        let initial = self.init.generate(self.platoon.n, &geometry, &bounds, &model)?;
        let scenario = Scenario {
            geometry,
            bounds,
            model,
            controller,
            criteria: self.criteria,
            initial,
        };
        scenario.validate().map_err(|e| match e {
            SimError::Invalid(reason) => invalid("init", reason),
            other => invalid("scenario", other.to_string()),
        })?;
        Ok(scenario)
    }
}

fn model_error(section: &str, e: crate::model::ModelError) -> ConfigError {
    match e {
        crate::model::ModelError::Invalid { field, reason } => invalid(field, reason),
        other => invalid(section, other.to_string()),
    }
}
