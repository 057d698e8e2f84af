//! Sensitivity sweeps: one scenario parameter varied over a grid, each grid
//! point run one or more times, runs executed in parallel.

use std::fmt::Write as _;
use std::path::Path;
use std::{fs, io};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ScenarioConfig};
use crate::sim::{run, SimError, ViolationCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "T_p")]
    PredictionHorizon,
    #[serde(rename = "T_c")]
    ControlHorizon,
    #[serde(rename = "tau")]
    SamplingTime,
    #[serde(rename = "rho")]
    TimeHeadway,
    #[serde(rename = "N")]
    VehicleCount,
}

impl SweepParameter {
    pub fn key(&self) -> &'static str {
        match self {
            Self::PredictionHorizon => "T_p",
            Self::ControlHorizon => "T_c",
            Self::SamplingTime => "tau",
            Self::TimeHeadway => "rho",
            Self::VehicleCount => "N",
        }
    }

    /// Writes `value` into the matching field of `config`. Horizons are in
    /// seconds, like the scenario file.
    pub fn apply(&self, config: &mut ScenarioConfig, value: f64) -> Result<(), ConfigError> {
        match self {
            Self::PredictionHorizon => config.controller.t_p = value,
            Self::ControlHorizon => config.controller.t_c = value,
            Self::SamplingTime => config.controller.tau = value,
            Self::TimeHeadway => config.bounds.rho = value,
            Self::VehicleCount => {
                if !(value.fract() == 0.0 && value >= 2.0) {
                    return Err(ConfigError::Invalid {
                        field: "N".into(),
                        reason: format!("vehicle count must be an integer of at least 2, got {value}"),
                    });
                }
                config.platoon.n = value as usize;
            }
        }
        Ok(())
    }
}

/// How per-run seeds relate across grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedMode {
    /// Every grid point reuses the same initial conditions per repetition,
    /// so differences across the grid come from the parameter alone.
    #[default]
    Paired,
    /// Each grid point gets its own initial conditions.
    Independent,
}

const REP_STRIDE: u64 = 1_000_003;
const VALUE_STRIDE: u64 = 7_919;

/// Seed of one run. Repetition 0 of a paired sweep uses the base seed itself.
pub fn run_seed(base: u64, mode: SeedMode, value_index: usize, repetition: usize) -> u64 {
    let rep = (repetition as u64).wrapping_mul(REP_STRIDE);
    let value = match mode {
        SeedMode::Paired => 0,
        SeedMode::Independent => (value_index as u64 + 1).wrapping_mul(VALUE_STRIDE),
    };
    base.wrapping_add(rep).wrapping_add(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_mode: SeedMode,
    #[serde(default)]
    pub base: ScenarioConfig,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let spec: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Every grid point must produce a valid scenario.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.values.is_empty() {
            return Err(invalid("values", "sweep needs at least one value"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        for (i, &value) in self.values.iter().enumerate() {
            self.config_for(i, value, 0)?.resolve().map_err(|e| match e {
                ConfigError::Invalid { field, reason } => ConfigError::Invalid {
                    field,
                    reason: format!("{reason} (at {} = {value})", self.parameter.key()),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    fn config_for(&self, value_index: usize, value: f64, repetition: usize) -> Result<ScenarioConfig, ConfigError> {
        let mut config = self.base.clone();
        self.parameter.apply(&mut config, value)?;
        config.init.seed = run_seed(self.base.init.seed, self.seed_mode, value_index, repetition);
        Ok(config)
    }

    /// Runs every (value, repetition) cell in parallel. Failures become rows.
    pub fn run(&self) -> SweepTable {
        let cells: Vec<(usize, f64, usize)> = self
            .values
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| (0..self.repetitions).map(move |r| (i, v, r)))
            .collect();
        let rows = cells
            .par_iter()
            .map(|&(i, v, r)| self.run_cell(i, v, r))
            .collect();
        SweepTable {
            parameter: self.parameter,
            rows,
        }
    }

    fn run_cell(&self, value_index: usize, value: f64, repetition: usize) -> SweepRow {
        let mut row = SweepRow {
            value,
            value_index,
            repetition,
            seed: run_seed(self.base.init.seed, self.seed_mode, value_index, repetition),
            status: RunStatus::Ok,
            formed: false,
            formation_time: None,
            violations: ViolationCounts::default(),
            mean_abs_u: None,
            message: None,
        };
        let scenario = match self.config_for(value_index, value, repetition).and_then(|c| c.resolve()) {
            Ok(s) => s,
            Err(e) => {
                row.status = RunStatus::Invalid;
                row.message = Some(e.to_string());
                return row;
            }
        };
        let trace = match run(&scenario) {
            Ok(trace) => trace,
            Err(SimError::Collision { trace, .. }) => {
                row.status = RunStatus::Collision;
                row.message = trace.summary.aborted.clone();
                row.violations = trace.summary.violations;
                return row;
            }
            Err(e) => {
                row.status = RunStatus::Error;
                row.message = Some(e.to_string());
                return row;
            }
        };
        let s = trace.summary;
        row.formed = s.formed;
        row.formation_time = s.formation_time;
        row.violations = s.violations;
        row.mean_abs_u = Some(s.mean_abs_u_cav);
        row
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Invalid,
    Collision,
    Error,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Invalid => "invalid",
            Self::Collision => "collision",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub value_index: usize,
    pub repetition: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub formed: bool,
    pub formation_time: Option<f64>,
    pub violations: ViolationCounts,
    pub mean_abs_u: Option<f64>,
    pub message: Option<String>,
}

/// Rows ordered by value index, then repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str = "parameter,value,value_index,repetition,seed,status,formed,formation_time,\
input_bound,head_to_tail,leader_follower,cav_speed,rear_end,scenario_faults,qp_not_optimal,mean_abs_u";

impl SweepTable {
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{SWEEP_CSV_HEADER}")?;
        let mut line = String::new();
        for r in &self.rows {
            line.clear();
            let v = &r.violations;
            let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
            let _ = write!(
                line,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.parameter.key(),
                r.value,
                r.value_index,
                r.repetition,
                r.seed,
                r.status.as_str(),
                r.formed,
                opt(r.formation_time),
                v.input_bound,
                v.head_to_tail,
                v.leader_follower,
                v.cav_speed,
                v.rear_end,
                v.scenario_faults,
                v.qp_not_optimal,
                opt(r.mean_abs_u),
            );
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn all_formed(&self) -> bool {
        self.rows.iter().all(|r| r.status == RunStatus::Ok && r.formed)
    }

    /// Rank correlation between the swept value and formation time over the
    /// runs that formed. `None` with fewer than two such runs or a constant
    /// column.
    pub fn spearman(&self) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| r.formation_time.map(|t| (r.value, t)))
            .unzip();
        spearman(&xs, &ys)
    }

    /// Largest minus smallest formation time among the runs that formed.
    pub fn formation_spread(&self) -> Option<f64> {
        let times: Vec<f64> = self.rows.iter().filter_map(|r| r.formation_time).collect();
        let max = times.iter().copied().reduce(f64::max)?;
        let min = times.iter().copied().reduce(f64::min)?;
        Some(max - min)
    }
}

/// Average ranks, 1-based; ties share the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
