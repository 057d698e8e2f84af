//! Longitudinal vehicle kinematics, roadway geometry and the spacing rules
//! shared by the car-following models, the controller and the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("vehicle ordering violated: leader at {leader} m is not ahead of follower at {follower} m (headway {headway} m)")]
    Ordering {
        leader: f64,
        follower: f64,
        headway: f64,
    },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// Position of the front bumper, speed and the last applied acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
}

impl VehicleState {
    pub fn new(position: f64, speed: f64) -> Self {
        Self {
            position,
            speed,
            accel: 0.0,
        }
    }
}

/// Single-lane road: a buffer zone `[0, buffer_len)` followed by the control
/// zone `[buffer_len, buffer_len + control_len]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub buffer_len: f64,
    pub control_len: f64,
}

impl RoadGeometry {
    pub fn new(buffer_len: f64, control_len: f64) -> Result<Self, ModelError> {
        let geometry = Self {
            buffer_len,
            control_len,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn total_len(&self) -> f64 {
        self.buffer_len + self.control_len
    }

    pub fn control_entry(&self) -> f64 {
        self.buffer_len
    }

    pub fn control_exit(&self) -> f64 {
        self.total_len()
    }

    pub fn zone_of(&self, position: f64) -> Zone {
        if position < self.buffer_len {
            Zone::Buffer
        } else if position <= self.total_len() {
            Zone::Control
        } else {
            Zone::Exited
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("L_b", self.buffer_len)?;
        positive("L_c", self.control_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Buffer,
    Control,
    Exited,
}

impl Zone {
    pub fn as_str(&self) -> &'static str {
        match self {
            Zone::Buffer => "buffer",
            Zone::Control => "control",
            Zone::Exited => "exited",
        }
    }
}

/// Speed and input limits plus the spacing policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Safe time headway in seconds.
    pub rho: f64,
    /// Standstill distance in meters.
    pub s0: f64,
    /// Vehicle length in meters.
    pub veh_len: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            v_min: 10.0,
            v_max: 30.0,
            u_min: -3.0,
            u_max: 2.0,
            rho: 1.5,
            s0: 2.0,
            veh_len: 5.0,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), ModelError> {
        finite("v_min", self.v_min)?;
        finite("v_max", self.v_max)?;
        if self.v_min < 0.0 {
            return Err(invalid("v_min", "must be non-negative"));
        }
        if self.v_min >= self.v_max {
            return Err(invalid("v_max", "must exceed v_min"));
        }
        finite("u_min", self.u_min)?;
        finite("u_max", self.u_max)?;
        if self.u_min >= 0.0 {
            return Err(invalid("u_min", "must be negative"));
        }
        if self.u_max <= 0.0 {
            return Err(invalid("u_max", "must be positive"));
        }
        positive("rho", self.rho)?;
        positive("s0", self.s0)?;
        positive("l_c", self.veh_len)
    }

    pub fn clamp_accel(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

fn finite(field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), ModelError> {
    finite(field, value)?;
    if value > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be strictly positive"))
    }
}

fn invalid(field: &'static str, reason: &str) -> ModelError {
    ModelError::Invalid {
        field,
        reason: reason.to_string(),
    }
}

/// Speed-dependent safe gap `rho * v + s0`.
pub fn dynamic_spacing(speed: f64, bounds: &Bounds) -> f64 {
    bounds.rho * speed + bounds.s0
}

/// Bumper-to-bumper gap between a leader and its follower.
pub fn headway(
    leader: &VehicleState,
    follower: &VehicleState,
    veh_len: f64,
) -> Result<f64, ModelError> {
    let gap = leader.position - follower.position - veh_len;
    if leader.position <= follower.position || !(gap > 0.0) {
        return Err(ModelError::Ordering {
            leader: leader.position,
            follower: follower.position,
            headway: gap,
        });
    }
    Ok(gap)
}

/// Leader speed minus follower speed.
pub fn approach_rate(leader: &VehicleState, follower: &VehicleState) -> f64 {
    leader.speed - follower.speed
}

/// Rear-end safety: the follower keeps at least its dynamic spacing.
pub fn rear_end_satisfied(headway: f64, follower_speed: f64, bounds: &Bounds) -> bool {
    headway >= dynamic_spacing(follower_speed, bounds)
}

/// Advances one vehicle by `tau` seconds under a constant (zero-order-hold)
/// acceleration. The input is clamped to `[u_min, u_max]` and the speed never
/// drops below zero; a vehicle that would stop mid-step is held at rest for
/// the remainder of the step.
pub fn euler_step(state: &VehicleState, u: f64, tau: f64, bounds: &Bounds) -> VehicleState {
    let accel = bounds.clamp_accel(u);
    let speed = state.speed + accel * tau;
    if speed >= 0.0 {
        return VehicleState {
            position: state.position + state.speed * tau + 0.5 * accel * tau * tau,
            speed,
            accel,
        };
    }
    // accel < 0 here, so the stopping time is well defined and < tau.
    let t_stop = -state.speed / accel;
    VehicleState {
        position: state.position + state.speed * t_stop + 0.5 * accel * t_stop * t_stop,
        speed: 0.0,
        accel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spacing_values() {
        let b = Bounds::default();
        assert_eq!(dynamic_spacing(0.0, &b), 2.0);
        assert_eq!(dynamic_spacing(20.0, &b), 32.0);
        assert_eq!(dynamic_spacing(30.0, &b), 47.0);
    }

    #[test]
    fn headway_values_and_overlap() {
        let lead = VehicleState::new(100.0, 20.0);
        let follow = VehicleState::new(60.0, 20.0);
        assert_eq!(headway(&lead, &follow, 5.0).unwrap(), 35.0);
        let lead = VehicleState::new(500.0, 20.0);
        let follow = VehicleState::new(453.0, 18.0);
        assert_eq!(headway(&lead, &follow, 5.0).unwrap(), 42.0);
        assert_eq!(approach_rate(&lead, &follow), 2.0);

        let same = VehicleState::new(60.0, 20.0);
        assert!(matches!(
            headway(&same, &follow_at(60.0), 5.0),
            Err(ModelError::Ordering { .. })
        ));
        // bumpers touching: ordered but zero gap
        assert!(headway(&VehicleState::new(65.0, 0.0), &follow_at(60.0), 5.0).is_err());
    }

    fn follow_at(p: f64) -> VehicleState {
        VehicleState::new(p, 0.0)
    }

    #[test]
    fn rear_end_cases() {
        let b = Bounds::default();
        assert!(rear_end_satisfied(35.0, 20.0, &b));
        assert!(!rear_end_satisfied(30.0, 20.0, &b));
        assert!(rear_end_satisfied(2.0, 0.0, &b));
    }

    #[test]
    fn euler_step_cases() {
        let b = Bounds::default();
        let s = VehicleState::new(0.0, 20.0);
        let cruise = euler_step(&s, 0.0, 0.1, &b);
        assert_abs_diff_eq!(cruise.position, 2.0, epsilon = 1e-12);
        assert_eq!(cruise.speed, 20.0);

        let brake = euler_step(&s, -3.0, 0.1, &b);
        assert_abs_diff_eq!(brake.position, 1.985, epsilon = 1e-12);
        assert_abs_diff_eq!(brake.speed, 19.7, epsilon = 1e-12);
        assert_eq!(brake.accel, -3.0);

        let clamped = euler_step(&s, -5.0, 0.1, &b);
        assert_eq!(clamped, brake);
    }

    #[test]
    fn euler_step_stops_at_zero() {
        let b = Bounds::default();
        let s = VehicleState::new(10.0, 0.1);
        let next = euler_step(&s, -3.0, 0.1, &b);
        assert_eq!(next.speed, 0.0);
        // stopping distance v^2 / (2|u|)
        assert_abs_diff_eq!(next.position, 10.0 + 0.01 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::default().validate().is_ok());
        let bad = Bounds {
            v_min: 31.0,
            ..Bounds::default()
        };
        assert!(bad.validate().is_err());
        let bad = Bounds {
            u_min: 0.5,
            ..Bounds::default()
        };
        assert!(bad.validate().is_err());
        assert!(RoadGeometry::new(500.0, 0.0).is_err());
        let g = RoadGeometry::new(500.0, 1500.0).unwrap();
        assert_eq!(g.total_len(), 2000.0);
        assert_eq!(g.zone_of(499.9), Zone::Buffer);
        assert_eq!(g.zone_of(500.0), Zone::Control);
        assert_eq!(g.zone_of(2000.1), Zone::Exited);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn speed_is_exact_sum_of_inputs(
                v0 in 5.0f64..25.0,
                inputs in proptest::collection::vec(-0.4f64..0.4, 1..60),
            ) {
                let b = Bounds::default();
                let tau = 0.1;
                let mut s = VehicleState::new(0.0, v0);
                for &u in &inputs {
                    s = euler_step(&s, u, tau, &b);
                }
                let expected = v0 + tau * inputs.iter().sum::<f64>();
                prop_assert!((s.speed - expected).abs() < 1e-10);
            }

            #[test]
            fn zero_input_is_linear(v0 in 0.0f64..30.0, n in 1usize..200) {
                let b = Bounds::default();
                let mut s = VehicleState::new(3.0, v0);
                for _ in 0..n {
                    s = euler_step(&s, 0.0, 0.1, &b);
                }
                prop_assert_eq!(s.speed, v0);
                prop_assert!((s.position - (3.0 + v0 * 0.1 * n as f64)).abs() < 1e-9 * (1.0 + v0 * n as f64));
            }

            #[test]
            fn headway_spans_add_up(pc in 0.0f64..100.0, g1 in 0.1f64..80.0, g2 in 0.1f64..80.0) {
                let l = 5.0;
                let c = VehicleState::new(pc, 10.0);
                let bv = VehicleState::new(pc + l + g2, 10.0);
                let a = VehicleState::new(bv.position + l + g1, 10.0);
                let sum = headway(&a, &bv, l).unwrap() + headway(&bv, &c, l).unwrap();
                prop_assert!((sum - (a.position - c.position - 2.0 * l)).abs() < 1e-9);
            }

            #[test]
            fn rear_end_monotone_in_gap(gap in 0.0f64..100.0, extra in 0.0f64..50.0, v in 0.0f64..30.0) {
                let b = Bounds::default();
                if rear_end_satisfied(gap, v, &b) {
                    prop_assert!(rear_end_satisfied(gap + extra, v, &b));
                }
            }
        }
    }
}
