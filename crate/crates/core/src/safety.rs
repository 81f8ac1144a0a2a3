//! Control barrier functions for the inspection task and their linearization
//! into control-affine rows `c·u + b ≥ 0`.
//!
//! | index | constraint                                   |
//! |-------|----------------------------------------------|
//! | 0     | collision avoidance with the chief           |
//! | 1     | stay within `r_max` of the chief             |
//! | 2     | distance-dependent speed limit               |
//! | 3..6  | per-axis velocity limits                     |
//!
//! The range rate `ṙ = p·v/‖p‖` is negative when approaching the chief.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsParams, RelativeState, DEFAULT_MEAN_MOTION};
use crate::error::{Error, Result};

pub const NUM_CONSTRAINTS: usize = 6;

/// Floor applied to norms and radicands when a gradient is evaluated on a
/// singular set.
pub const SMOOTHING_FLOOR: f64 = 1e-6;

pub const CONSTRAINT_NAMES: [&str; NUM_CONSTRAINTS] = [
    "collision",
    "max_distance",
    "speed_limit",
    "vx_limit",
    "vy_limit",
    "vz_limit",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyParams {
    /// Maximum braking acceleration available from control and natural motion (m/s²).
    pub a_max: f64,
    /// Deputy radius (m).
    pub r_d: f64,
    /// Chief radius (m).
    pub r_c: f64,
    /// Keep-in radius (m).
    pub r_max: f64,
    /// Allowed speed at the origin (m/s).
    pub nu0: f64,
    /// Allowed speed growth per meter of range (1/s).
    pub nu1: f64,
    /// Per-axis velocity limit (m/s).
    pub v_max: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            a_max: 0.078,
            r_d: 5.0,
            r_c: 5.0,
            r_max: 1000.0,
            nu0: 0.2,
            nu1: 2.0 * DEFAULT_MEAN_MOTION,
            v_max: 1.0,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_max", self.a_max),
            ("r_d", self.r_d),
            ("r_c", self.r_c),
            ("r_max", self.r_max),
            ("nu0", self.nu0),
            ("nu1", self.nu1),
            ("v_max", self.v_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.collision_radius() >= self.r_max {
            return Err(Error::invalid("r_max", "must exceed r_d + r_c"));
        }
        Ok(())
    }

    pub fn collision_radius(&self) -> f64 {
        self.r_d + self.r_c
    }
}

/// Linear class-K strengthening `α_i(h) = gain_i · h` per constraint.
///
/// The default is 0.1/s for the two range barriers and 1/s for the speed
/// barriers. Larger range gains let the deputy ride the braking curve until
/// the 2 s thrust hold can no longer stop it in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaGains(pub [f64; NUM_CONSTRAINTS]);

impl Default for AlphaGains {
    fn default() -> Self {
        Self([0.1, 0.1, 1.0, 1.0, 1.0, 1.0])
    }
}

impl AlphaGains {
    pub fn uniform(gain: f64) -> Self {
        Self([gain; NUM_CONSTRAINTS])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|g| g.is_finite() && *g > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("alpha", "gains must be finite and > 0"))
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.map(|g| g * factor))
    }

    pub fn apply(&self, i: usize, h: f64) -> f64 {
        self.0[i] * h
    }

    /// Per-period decay `1 − e^(−gain·period)`: the fraction of `h` a
    /// sampled-data filter may give up over one hold interval. Equals the exact
    /// decay of `ḣ = −gain·h`.
    pub fn discrete_rate(&self, i: usize, period: f64) -> f64 {
        -(-self.0[i] * period).exp_m1()
    }
}

/// One affine constraint on the thrust: `c·u + b ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfRow {
    pub c: Vector3<f64>,
    pub b: f64,
}

impl CbfRow {
    pub fn new(c: Vector3<f64>, b: f64) -> Self {
        Self { c, b }
    }

    pub fn slack(&self, u: &Vector3<f64>) -> f64 {
        self.c.dot(u) + self.b
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.c.iter().all(|v| v.is_finite())
    }
}

/// `sign(d)·√(2a|d|)`: keeps violation depth meaningful when the radicand
/// goes negative.
fn signed_sqrt(a_max: f64, d: f64) -> f64 {
    let s = (2.0 * a_max * d.abs()).sqrt();
    if d < 0.0 {
        -s
    } else {
        s
    }
}

fn range_rate(p: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let r = p.norm();
    if r > 0.0 {
        p.dot(v) / r
    } else {
        0.0
    }
}

pub fn h_values(state: &RelativeState, params: &SafetyParams) -> [f64; NUM_CONSTRAINTS] {
    let p = &state.position;
    let v = &state.velocity;
    let r = p.norm();
    let rdot = range_rate(p, v);
    let vmax2 = params.v_max * params.v_max;
    [
        signed_sqrt(params.a_max, r - params.collision_radius()) + rdot,
        signed_sqrt(params.a_max, params.r_max - r) - rdot,
        params.nu0 + params.nu1 * r - v.norm(),
        vmax2 - v.x * v.x,
        vmax2 - v.y * v.y,
        vmax2 - v.z * v.z,
    ]
}

pub fn min_h(state: &RelativeState, params: &SafetyParams) -> f64 {
    h_values(state, params).into_iter().fold(f64::INFINITY, f64::min)
}

/// True iff every barrier is non-negative.
pub fn is_safe(state: &RelativeState, params: &SafetyParams) -> bool {
    h_values(state, params).iter().all(|&h| h >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    /// `∂h/∂[x, y, z, vx, vy, vz]`.
    pub grad: Vector6<f64>,
    /// Set when a norm or radicand was floored at [`SMOOTHING_FLOOR`].
    pub smoothed: bool,
}

/// Analytic gradient of barrier `i` with respect to position and velocity.
pub fn grad_h(state: &RelativeState, params: &SafetyParams, i: usize) -> Gradient {
    assert!(i < NUM_CONSTRAINTS, "constraint index {i} out of range");
    let p = &state.position;
    let v = &state.velocity;
    let mut smoothed = false;

    let mut grad = Vector6::zeros();
    match i {
        0 | 1 => {
            let r = p.norm();
            let (p_hat, drdot_dp) = if r < SMOOTHING_FLOOR {
                smoothed = true;
                (Vector3::zeros(), Vector3::zeros())
            } else {
                let p_hat = p / r;
                let rdot = p_hat.dot(v);
                (p_hat, (v - p_hat * rdot) / r)
            };
            let d = if i == 0 {
                r - params.collision_radius()
            } else {
                params.r_max - r
            };
            let d_abs = if d.abs() < SMOOTHING_FLOOR {
                smoothed = true;
                SMOOTHING_FLOOR
            } else {
                d.abs()
            };
            // derivative of sign(d)·√(2a|d|) with respect to d is a/√(2a|d|) on both branches
            let dsqrt = params.a_max / (2.0 * params.a_max * d_abs).sqrt();
            let sign = if i == 0 { 1.0 } else { -1.0 };
            grad.fixed_rows_mut::<3>(0)
                .copy_from(&((p_hat * dsqrt + drdot_dp) * sign));
            grad.fixed_rows_mut::<3>(3).copy_from(&(p_hat * sign));
        }
        2 => {
            let r = p.norm();
            let p_hat = if r < SMOOTHING_FLOOR {
                smoothed = true;
                Vector3::zeros()
            } else {
                p / r
            };
            let speed = v.norm();
            let v_hat = if speed < SMOOTHING_FLOOR {
                smoothed = true;
                v / SMOOTHING_FLOOR
            } else {
                v / speed
            };
            grad.fixed_rows_mut::<3>(0).copy_from(&(p_hat * params.nu1));
            grad.fixed_rows_mut::<3>(3).copy_from(&(-v_hat));
        }
        _ => {
            let axis = i - 3;
            grad[3 + axis] = -2.0 * v[axis];
        }
    }
    Gradient { grad, smoothed }
}

/// Affine rows of the filter together with the barrier values they came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfRows {
    pub rows: [CbfRow; NUM_CONSTRAINTS],
    pub h: [f64; NUM_CONSTRAINTS],
    pub smoothed: [bool; NUM_CONSTRAINTS],
}

/// Builds `c_i = (L_g h_i)ᵀ` and `b_i = L_f h_i + α_i(h_i)` for every barrier.
pub fn cbf_rows(
    state: &RelativeState,
    safety: &SafetyParams,
    dynamics: &DynamicsParams,
    alphas: &AlphaGains,
) -> CbfRows {
    let h = h_values(state, safety);
    let drift = {
        let mut f = Vector6::zeros();
        f.fixed_rows_mut::<3>(0).copy_from(&state.velocity);
        f.fixed_rows_mut::<3>(3)
            .copy_from(&dynamics.natural_acceleration(&state.position, &state.velocity));
        f
    };

    let mut rows = [CbfRow::new(Vector3::zeros(), 0.0); NUM_CONSTRAINTS];
    let mut smoothed = [false; NUM_CONSTRAINTS];
    for i in 0..NUM_CONSTRAINTS {
        let g = grad_h(state, safety, i);
        let lf = g.grad.dot(&drift);
        let lg = g.grad.fixed_rows::<3>(3) / dynamics.mass;
        rows[i] = CbfRow::new(lg.into_owned(), lf + alphas.apply(i, h[i]));
        smoothed[i] = g.smoothed;
    }
    CbfRows { rows, h, smoothed }
}
