//! Intelligent driver model dynamics.

use alloc::format;

use crate::error::{CoreError, Result};

/// Commanded acceleration is clamped to this range in [`step`].
pub const ACCEL_MIN: f64 = -9.0;
pub const ACCEL_MAX: f64 = 5.0;

/// IDM parameter set. The exponent delta is fixed at 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
    /// Jam spacing, m.
    pub s0: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
}

pub const DELTA: f64 = 4.0;

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v0", self.v0),
            ("T", self.t_headway),
            ("s0", self.s0),
            ("a_max", self.a_max),
            ("b", self.b),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CoreError::Argument(format!(
                    "IDM parameter {name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Desired dynamic spacing s*(v, dv), floored at s0.
    ///
    /// `approach_rate` is v_foll - v_lead (positive when closing in).
    pub fn desired_spacing(&self, v: f64, approach_rate: f64) -> f64 {
        let dynamic = v * self.t_headway
            + v * approach_rate / (2.0 * libm::sqrt(self.a_max * self.b));
        self.s0 + dynamic.max(0.0)
    }

    /// Steady-state gap when following a constant-speed leader at `v` < v0.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        let free = 1.0 - libm::pow(v / self.v0, DELTA);
        self.desired_spacing(v, 0.0) / libm::sqrt(free)
    }
}

/// IDM acceleration law: a_max [1 - (v/v0)^delta - (s*/s)^2].
pub fn idm_accel(p: &IdmParams, v: f64, approach_rate: f64, gap: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(CoreError::Argument(format!(
            "IDM requires positive gap, got {gap}"
        )));
    }
    let s_star = p.desired_spacing(v, approach_rate);
    let free = libm::pow(v / p.v0, DELTA);
    let interaction = (s_star / gap) * (s_star / gap);
    Ok(p.a_max * (1.0 - free - interaction))
}

/// Follower longitudinal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub v: f64,
}

/// Semi-implicit Euler update with no reversing:
/// v+ = max(0, v + a dt), x+ = x + (v + v+)/2 dt.
pub fn kinematic_update(state: VehicleState, a: f64, dt: f64) -> VehicleState {
    let v_next = (state.v + a * dt).max(0.0);
    VehicleState {
        x: state.x + 0.5 * (state.v + v_next) * dt,
        v: v_next,
    }
}

/// One closed-loop IDM step against a leader snapshot, with the commanded
/// acceleration clamped to `[ACCEL_MIN, ACCEL_MAX]`.
pub fn step(
    p: &IdmParams,
    state: VehicleState,
    leader: VehicleState,
    leader_length: f64,
    dt: f64,
) -> Result<(VehicleState, f64)> {
    let gap = leader.x - state.x - leader_length;
    if gap <= 0.0 {
        return Err(CoreError::Collision { step: 0, gap });
    }
    let a = idm_accel(p, state.v, state.v - leader.v, gap)?.clamp(ACCEL_MIN, ACCEL_MAX);
    Ok((kinematic_update(state, a, dt), a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> IdmParams {
        IdmParams {
            v0: 30.0,
            t_headway: 1.5,
            s0: 2.0,
            a_max: 1.0,
            b: 1.5,
        }
    }

    #[test]
    fn standstill_at_jam_spacing_is_fixed_point() {
        let a = idm_accel(&params(), 0.0, 0.0, 2.0).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn free_road_acceleration_matches_formula() {
        let p = IdmParams {
            v0: 30.0,
            t_headway: 1.5,
            s0: 2.0,
            a_max: 1.0,
            b: 1.5,
        };
        let a = idm_accel(&p, 10.0, 0.0, 1e6).unwrap();
        // 1 - (1/3)^4, with a negligible interaction term at s = 1e6.
        assert_relative_eq!(a, 1.0 - 1.0 / 81.0, epsilon = 1e-6);
    }

    #[test]
    fn at_desired_speed_acceleration_is_negative() {
        let a = idm_accel(&params(), 30.0, 0.0, 500.0).unwrap();
        assert!(a < 0.0);
    }

    #[test]
    fn nonpositive_gap_is_domain_error() {
        assert!(idm_accel(&params(), 10.0, 0.0, 0.0).is_err());
        assert!(idm_accel(&params(), 10.0, 0.0, -3.0).is_err());
    }

    #[test]
    fn desired_spacing_floored_at_s0() {
        // Strongly opening gap would make the dynamic part negative.
        let p = params();
        assert_eq!(p.desired_spacing(5.0, -50.0), p.s0);
    }

    #[test]
    fn zero_accel_step_is_uniform_motion() {
        // Equilibrium gap at v: acceleration is exactly zero there.
        let p = params();
        let v = 20.0;
        let gap = p.equilibrium_gap(v);
        let state = VehicleState { x: 0.0, v };
        let leader = VehicleState { x: gap, v };
        let (next, a) = step(&p, state, leader, 0.0, 0.2).unwrap();
        assert_relative_eq!(a, 0.0, epsilon = 1e-12);
        assert_relative_eq!(next.x, v * 0.2, epsilon = 1e-9);
        assert_relative_eq!(next.v, v, epsilon = 1e-9);
    }

    #[test]
    fn stopped_vehicle_does_not_reverse() {
        let p = params();
        let state = VehicleState { x: 0.0, v: 0.0 };
        let leader = VehicleState { x: 1.0, v: 0.0 };
        let (next, a) = step(&p, state, leader, 0.0, 0.2).unwrap();
        assert!(a < 0.0);
        assert_eq!(next.v, 0.0);
        assert_eq!(next.x, 0.0);
    }

    #[test]
    fn constant_accel_integration_matches_closed_form() {
        // The semi-implicit scheme is exact under constant acceleration.
        let dt = 0.2;
        let a = 0.7;
        let mut state = VehicleState { x: 0.0, v: 3.0 };
        for _ in 0..10 {
            state = kinematic_update(state, a, dt);
        }
        let t = 10.0 * dt;
        assert_relative_eq!(state.x, 3.0 * t + 0.5 * a * t * t, epsilon = 1e-9);
        assert_relative_eq!(state.v, 3.0 + a * t, epsilon = 1e-12);
    }

    #[test]
    fn gap_converges_to_equilibrium() {
        let p = params();
        let v_lead = 22.0;
        let mut state = VehicleState { x: 0.0, v: 18.0 };
        let mut leader = VehicleState { x: 60.0, v: v_lead };
        let dt = 0.2;
        for _ in 0..(600.0 / dt) as usize {
            let (next, _) = step(&p, state, leader, 0.0, dt).unwrap();
            state = next;
            leader.x += v_lead * dt;
        }
        let gap = leader.x - state.x;
        assert_relative_eq!(gap, p.equilibrium_gap(v_lead), max_relative = 0.02);
    }
}
