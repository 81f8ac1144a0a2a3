//! Clohessy-Wiltshire relative motion in Hill's frame.
//!
//! Frame convention: `x` radial (away from Earth), `y` in-track, `z` cross-track,
//! origin at the chief's center of mass. The sun direction rotates in the x-y
//! plane at `-n` rad/s.

use std::f64::consts::TAU;

use nalgebra::{Matrix3x6, Matrix6, Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MEAN_MOTION: f64 = 0.001027;
pub const DEFAULT_MASS: f64 = 12.0;
pub const DEFAULT_U_MAX: f64 = 1.0;

/// Default inner integration step in space-frame seconds.
pub const DEFAULT_INNER_STEP: f64 = 0.2;

/// Deputy state in Hill's frame plus sun angle and simulation clock.
///
/// The sun angle is kept unwrapped so it is monotone in `t`; use
/// [`RelativeState::sun_angle_wrapped`] at API boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub sun_angle: f64,
    pub t: f64,
}

impl RelativeState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, sun_angle: f64) -> Self {
        Self {
            position,
            velocity,
            sun_angle,
            t: 0.0,
        }
    }

    pub fn from_vector(x: &Vector6<f64>, sun_angle: f64, t: f64) -> Self {
        Self {
            position: x.fixed_rows::<3>(0).into_owned(),
            velocity: x.fixed_rows::<3>(3).into_owned(),
            sun_angle,
            t,
        }
    }

    /// Position and velocity stacked as `[x, y, z, vx, vy, vz]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.position);
        out.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        out
    }

    pub fn sun_angle_wrapped(&self) -> f64 {
        wrap_angle(self.sun_angle)
    }

    pub fn range(&self) -> f64 {
        self.position.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
            && self.sun_angle.is_finite()
            && self.t.is_finite()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("relative state"))
        }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    /// Mean motion of the chief's circular orbit (rad/s).
    pub mean_motion: f64,
    /// Deputy mass (kg).
    pub mass: f64,
    /// Per-axis thrust limit (N).
    pub u_max: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            mean_motion: DEFAULT_MEAN_MOTION,
            mass: DEFAULT_MASS,
            u_max: DEFAULT_U_MAX,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mean_motion", self.mean_motion),
            ("mass", self.mass),
            ("u_max", self.u_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// System matrix of `ẋ = A x + B u`.
    pub fn a_matrix(&self) -> Matrix6<f64> {
        let n = self.mean_motion;
        let mut a = Matrix6::zeros();
        a[(0, 3)] = 1.0;
        a[(1, 4)] = 1.0;
        a[(2, 5)] = 1.0;
        a[(3, 0)] = 3.0 * n * n;
        a[(3, 4)] = 2.0 * n;
        a[(4, 3)] = -2.0 * n;
        a[(5, 2)] = -n * n;
        a
    }

    pub fn b_matrix(&self) -> Matrix6x3<f64> {
        let mut b = Matrix6x3::zeros();
        let inv_m = 1.0 / self.mass;
        b[(3, 0)] = inv_m;
        b[(4, 1)] = inv_m;
        b[(5, 2)] = inv_m;
        b
    }

    /// Acceleration of the unforced system, i.e. the lower block of `A x`.
    pub fn natural_acceleration(&self, position: &Vector3<f64>, velocity: &Vector3<f64>) -> Vector3<f64> {
        let n = self.mean_motion;
        Vector3::new(
            3.0 * n * n * position.x + 2.0 * n * velocity.y,
            -2.0 * n * velocity.x,
            -n * n * position.z,
        )
    }

    /// Lower 3×6 block of `A`, mapping the full state to natural acceleration.
    pub fn a_lower(&self) -> Matrix3x6<f64> {
        self.a_matrix().fixed_rows::<3>(3).into_owned()
    }
}

/// Three-axis thrust command in newtons.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlVector(pub Vector3<f64>);

impl ControlVector {
    pub fn new(fx: f64, fy: f64, fz: f64) -> Self {
        Self(Vector3::new(fx, fy, fz))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    /// Per-axis clamp to `[-u_max, u_max]`. NaN components map to zero.
    pub fn clamped(&self, u_max: f64) -> Self {
        Self(self.0.map(|f| if f.is_nan() { 0.0 } else { f.clamp(-u_max, u_max) }))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|f| f.is_finite())
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|f| f.abs()).sum()
    }
}

impl From<Vector3<f64>> for ControlVector {
    fn from(v: Vector3<f64>) -> Self {
        Self(v)
    }
}

/// Time derivative of a [`RelativeState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub sun_rate: f64,
}

impl StateDerivative {
    pub fn to_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.velocity);
        out.fixed_rows_mut::<3>(3).copy_from(&self.acceleration);
        out
    }
}

pub fn cw_derivative(state: &RelativeState, u: &ControlVector, params: &DynamicsParams) -> Result<StateDerivative> {
    params.validate()?;
    state.check_finite()?;
    if !u.is_finite() {
        return Err(Error::NonFinite("control vector"));
    }
    Ok(derivative_unchecked(&state.position, &state.velocity, u, params))
}

fn derivative_unchecked(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    u: &ControlVector,
    params: &DynamicsParams,
) -> StateDerivative {
    StateDerivative {
        velocity: *velocity,
        acceleration: params.natural_acceleration(position, velocity) + u.0 / params.mass,
        sun_rate: -params.mean_motion,
    }
}

/// One fixed RK4 step of length `dt` with `u` held constant.
pub fn step(state: &RelativeState, u: &ControlVector, dt: f64, params: &DynamicsParams) -> Result<RelativeState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    params.validate()?;
    state.check_finite()?;
    if !u.is_finite() {
        return Err(Error::NonFinite("control vector"));
    }
    Ok(rk4(state, u, dt, params))
}

fn rk4(state: &RelativeState, u: &ControlVector, dt: f64, params: &DynamicsParams) -> RelativeState {
    let (p0, v0) = (state.position, state.velocity);
    let k1 = derivative_unchecked(&p0, &v0, u, params);
    let k2 = derivative_unchecked(
        &(p0 + k1.velocity * (dt / 2.0)),
        &(v0 + k1.acceleration * (dt / 2.0)),
        u,
        params,
    );
    let k3 = derivative_unchecked(
        &(p0 + k2.velocity * (dt / 2.0)),
        &(v0 + k2.acceleration * (dt / 2.0)),
        u,
        params,
    );
    let k4 = derivative_unchecked(&(p0 + k3.velocity * dt), &(v0 + k3.acceleration * dt), u, params);

    let position = p0 + (k1.velocity + k2.velocity * 2.0 + k3.velocity * 2.0 + k4.velocity) * (dt / 6.0);
    let velocity =
        v0 + (k1.acceleration + k2.acceleration * 2.0 + k3.acceleration * 2.0 + k4.acceleration) * (dt / 6.0);

    RelativeState {
        position,
        velocity,
        sun_angle: state.sun_angle - params.mean_motion * dt,
        t: state.t + dt,
    }
}

/// Propagates over `duration` with `u` held constant, splitting into equal
/// RK4 sub-steps no longer than `max_step`.
pub fn propagate_zoh(
    state: &RelativeState,
    u: &ControlVector,
    duration: f64,
    max_step: f64,
    params: &DynamicsParams,
) -> Result<RelativeState> {
    let n_sub = substeps(duration, max_step)?;
    let dt = duration / n_sub as f64;
    let mut s = *state;
    for _ in 0..n_sub {
        s = step(&s, u, dt, params)?;
    }
    Ok(s)
}

/// Number of equal sub-steps of at most `max_step` that tile `duration`.
pub fn substeps(duration: f64, max_step: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidTimeStep(duration));
    }
    if !(max_step > 0.0 && max_step.is_finite()) {
        return Err(Error::InvalidTimeStep(max_step));
    }
    // tolerate representation error so 2.0 / 0.2 stays at 10 sub-steps
    Ok(((duration / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Closed-form Clohessy-Wiltshire state transition matrix for elapsed time `t`.
pub fn cw_transition_matrix(t: f64, params: &DynamicsParams) -> Matrix6<f64> {
    let n = params.mean_motion;
    let nt = n * t;
    let (s, c) = nt.sin_cos();

    #[rustfmt::skip]
    let phi = Matrix6::new(
        4.0 - 3.0 * c,          0.0, 0.0,  s / n,                2.0 * (1.0 - c) / n,       0.0,
        6.0 * (s - nt),         1.0, 0.0,  -2.0 * (1.0 - c) / n, (4.0 * s - 3.0 * nt) / n,  0.0,
        0.0,                    0.0, c,    0.0,                  0.0,                       s / n,
        3.0 * n * s,            0.0, 0.0,  c,                    2.0 * s,                   0.0,
        -6.0 * n * (1.0 - c),   0.0, 0.0,  -2.0 * s,             4.0 * c - 3.0,             0.0,
        0.0,                    0.0, -n * s, 0.0,                0.0,                       c,
    );
    phi
}

/// Free-motion (u = 0) state after `t` seconds, evaluated in closed form.
pub fn analytic_propagate(state: &RelativeState, t: f64, params: &DynamicsParams) -> Result<RelativeState> {
    params.validate()?;
    state.check_finite()?;
    if !t.is_finite() {
        return Err(Error::NonFinite("propagation time"));
    }
    let x = cw_transition_matrix(t, params) * state.to_vector();
    Ok(RelativeState::from_vector(
        &x,
        state.sun_angle - params.mean_motion * t,
        state.t + t,
    ))
}

/// Unit vector from the chief toward the sun.
pub fn sun_vector(theta: f64) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(c, s, 0.0)
}

/// Deputy pose expressed in the scaled laboratory frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabPose {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub t: f64,
}

fn check_scales(position_scale: f64, time_scale: f64) -> Result<()> {
    if !(position_scale > 0.0 && position_scale.is_finite()) {
        return Err(Error::invalid(
            "position_scale",
            format!("must be > 0, got {position_scale}"),
        ));
    }
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(Error::invalid("time_scale", format!("must be > 0, got {time_scale}")));
    }
    Ok(())
}

/// Maps a space-frame state into the lab: positions and times are divided
/// by their scales, velocities are multiplied by `time_scale / position_scale`.
pub fn space_to_lab(state: &RelativeState, position_scale: f64, time_scale: f64) -> Result<LabPose> {
    check_scales(position_scale, time_scale)?;
    Ok(LabPose {
        position: state.position / position_scale,
        velocity: state.velocity * (time_scale / position_scale),
        t: state.t / time_scale,
    })
}

/// Inverse of [`space_to_lab`]; the sun angle is not part of the lab pose
/// and must be supplied.
pub fn lab_to_space(pose: &LabPose, sun_angle: f64, position_scale: f64, time_scale: f64) -> Result<RelativeState> {
    check_scales(position_scale, time_scale)?;
    Ok(RelativeState {
        position: pose.position * position_scale,
        velocity: pose.velocity * (position_scale / time_scale),
        sun_angle,
        t: pose.t * time_scale,
    })
}
