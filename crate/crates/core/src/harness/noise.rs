use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::NoiseModel;
use crate::dynamics::RelativeState;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

/// Sensed state: truth plus independent Gaussian errors on position and velocity.
/// Zero σ returns the state untouched.
pub fn inject_noise<R: Rng + ?Sized>(state: &RelativeState, model: &NoiseModel, rng: &mut R) -> RelativeState {
    let mut sensed = *state;
    if model.position_sigma > 0.0 {
        sensed.position += gaussian(rng, model.position_sigma);
    }
    if model.velocity_sigma > 0.0 {
        sensed.velocity += gaussian(rng, model.velocity_sigma);
    }
    sensed
}

/// Disturbance acceleration held over one control period (m/s²).
pub fn disturbance<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> Vector3<f64> {
    if model.disturbance_sigma > 0.0 {
        gaussian(rng, model.disturbance_sigma)
    } else {
        Vector3::zeros()
    }
}
