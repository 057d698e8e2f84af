use serde::{Deserialize, Serialize};

use super::FleetState;
use crate::model::headway;

/// Thresholds on the spread of headways and speeds, and how many consecutive
/// steps they must hold before the platoon counts as formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationCriteria {
    pub eps_dp: f64,
    pub eps_v: f64,
    pub hold_steps: usize,
}

impl Default for FormationCriteria {
    fn default() -> Self {
        Self {
            eps_dp: 1.0,
            eps_v: 0.25,
            hold_steps: 20,
        }
    }
}

impl FormationCriteria {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps_dp.is_finite() && self.eps_dp > 0.0) {
            return Err("eps_dp must be positive".into());
        }
        if !(self.eps_v.is_finite() && self.eps_v > 0.0) {
            return Err("eps_v must be positive".into());
        }
        if self.hold_steps == 0 {
            return Err("hold_steps must be at least 1".into());
        }
        Ok(())
    }
}

/// Root-mean-square deviation of the `N-1` headways from their mean and of
/// the `N` speeds from theirs. Overlapping vehicles contribute their signed
/// (non-positive) gap.
pub fn formation_rmse(fleet: &FleetState, veh_len: f64) -> (f64, f64) {
    let gaps: Vec<f64> = fleet
        .states
        .windows(2)
        .map(|pair| headway(&pair[0], &pair[1], veh_len).unwrap_or(pair[0].position - pair[1].position - veh_len))
        .collect();
    let speeds: Vec<f64> = fleet.states.iter().map(|s| s.speed).collect();
    (rms_deviation(&gaps), rms_deviation(&speeds))
}

fn rms_deviation(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Snapshot check: both spreads within their thresholds.
pub fn detect_formation(fleet: &FleetState, criteria: &FormationCriteria, veh_len: f64) -> (f64, f64, bool) {
    let (dp, v) = formation_rmse(fleet, veh_len);
    (dp, v, dp <= criteria.eps_dp && v <= criteria.eps_v)
}

/// Latches the first step of the first window of `hold_steps` consecutive
/// in-threshold steps.
#[derive(Debug, Clone)]
pub struct FormationDetector {
    criteria: FormationCriteria,
    run_start: Option<usize>,
    run_len: usize,
    formed_at: Option<usize>,
}

impl FormationDetector {
    pub fn new(criteria: FormationCriteria) -> Self {
        Self {
            criteria,
            run_start: None,
            run_len: 0,
            formed_at: None,
        }
    }

    pub fn update(&mut self, step: usize, rmse_dp: f64, rmse_v: f64) -> bool {
        let inside = rmse_dp <= self.criteria.eps_dp && rmse_v <= self.criteria.eps_v;
        if inside {
            if self.run_start.is_none() {
                self.run_start = Some(step);
                self.run_len = 0;
            }
            self.run_len += 1;
            if self.formed_at.is_none() && self.run_len >= self.criteria.hold_steps {
                self.formed_at = self.run_start;
            }
        } else {
            self.run_start = None;
            self.run_len = 0;
        }
        self.formed_at.is_some()
    }

    pub fn formed_at(&self) -> Option<usize> {
        self.formed_at
    }
}
