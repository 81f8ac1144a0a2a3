use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlVector, DynamicsParams, RelativeState};
use crate::error::{Error, Result};
use crate::safety::SafetyParams;

pub const DEFAULT_ORBIT_RADIUS: f64 = 30.0;
pub const DEFAULT_ORBIT_RATE: f64 = 0.006;
pub const DEFAULT_ORBIT_GAIN: f64 = 0.02;

/// Circumnavigation controller tracking a constant-rate circle about the chief.
///
/// The reference phase is taken from the deputy's own projection onto the
/// orbit plane, so the controller has no internal clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOrbit {
    pub radius: f64,
    /// Unit normal of the orbit plane; motion is counter-clockwise about it.
    pub normal: Vector3<f64>,
    /// Natural frequency of the tracking loop (rad/s).
    pub gain: f64,
    /// Angular rate of the reference (rad/s).
    pub angular_rate: f64,
    pub params: DynamicsParams,
}

impl ScriptedOrbit {
    pub fn new(radius: f64, normal: Vector3<f64>, gain: f64, params: DynamicsParams) -> Result<Self> {
        params.validate()?;
        let min = SafetyParams::default().collision_radius();
        if !(radius > min) || !radius.is_finite() {
            return Err(Error::invalid("radius", "must exceed the collision radius"));
        }
        let len = normal.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(Error::invalid("normal", "must be a finite non-zero vector"));
        }
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::invalid("gain", "must be positive"));
        }
        Ok(Self {
            radius,
            normal: normal / len,
            gain,
            angular_rate: DEFAULT_ORBIT_RATE,
            params,
        })
    }

    /// 30 m circle in the x–z plane.
    pub fn xz_default(params: DynamicsParams) -> Self {
        Self::new(DEFAULT_ORBIT_RADIUS, Vector3::y(), DEFAULT_ORBIT_GAIN, params)
            .expect("default orbit parameters are valid")
    }

    pub fn with_angular_rate(mut self, rate: f64) -> Self {
        self.angular_rate = rate;
        self
    }

    /// Reference position, velocity and acceleration at the deputy's phase.
    pub fn reference(&self, position: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = self.normal;
        let in_plane = position - n * n.dot(position);
        let r_hat = match in_plane.try_normalize(1e-9) {
            Some(d) => d,
            // on the normal axis: any in-plane direction will do
            None => {
                let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                (seed - n * n.dot(&seed)).normalize()
            }
        };
        let t_hat = n.cross(&r_hat);
        let (r, w) = (self.radius, self.angular_rate);
        (r_hat * r, t_hat * (w * r), -r_hat * (w * w * r))
    }

    pub fn control(&self, state: &RelativeState) -> ControlVector {
        scripted_orbit(state, self)
    }
}

/// `m·(a_ref + g²(p_ref − p) + 2g(v_ref − v) − f(p, v))`, clamped to the box.
pub fn scripted_orbit(state: &RelativeState, orbit: &ScriptedOrbit) -> ControlVector {
    let (p_ref, v_ref, a_ref) = orbit.reference(&state.position);
    let g = orbit.gain;
    let natural = orbit.params.natural_acceleration(&state.position, &state.velocity);
    let accel = a_ref + (p_ref - state.position) * (g * g) + (v_ref - state.velocity) * (2.0 * g) - natural;
    ControlVector(accel * orbit.params.mass).clamped(orbit.params.u_max)
}
