//! Primary controllers. Each returns a thrust already clamped to the
//! actuation box; the safety filter sits downstream.

pub mod lqr;
pub mod mlp;
pub mod scripted;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{ControlVector, RelativeState};
use crate::error::Result;
use crate::inspection::InspectionSphere;

pub use lqr::{lqr_control, lqr_design, riccati_residual, LqrController};
pub use mlp::{mlp_act, mlp_load, MlpPolicy};
pub use scripted::{scripted_orbit, ScriptedOrbit};

/// A primary controller queried once per control period.
///
/// `sphere` carries the inspection progress for policies whose observation
/// includes it; most controllers ignore it.
pub trait Controller {
    fn control(&mut self, state: &RelativeState, sphere: &InspectionSphere) -> Result<ControlVector>;

    fn name(&self) -> &str;
}

impl Controller for LqrController {
    fn control(&mut self, state: &RelativeState, _: &InspectionSphere) -> Result<ControlVector> {
        Ok(lqr_control(self, state))
    }

    fn name(&self) -> &str {
        "lqr"
    }
}

impl Controller for ScriptedOrbit {
    fn control(&mut self, state: &RelativeState, _: &InspectionSphere) -> Result<ControlVector> {
        Ok(scripted_orbit(state, self))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Always commands zero thrust.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn control(&mut self, _: &RelativeState, _: &InspectionSphere) -> Result<ControlVector> {
        Ok(ControlVector::zero())
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// Independent uniform draws from the actuation box on every call.
#[derive(Debug, Clone)]
pub struct RandomBounded {
    rng: ChaCha8Rng,
    u_max: f64,
}

impl RandomBounded {
    pub fn new(u_max: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            u_max,
        }
    }
}

impl Controller for RandomBounded {
    fn control(&mut self, _: &RelativeState, _: &InspectionSphere) -> Result<ControlVector> {
        let b = self.u_max;
        let mut draw = || self.rng.random_range(-b..=b);
        Ok(ControlVector::new(draw(), draw(), draw()))
    }

    fn name(&self) -> &str {
        "random"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn random_controller_is_seeded_and_bounded() {
        let s = RelativeState::new(Vector3::new(50.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let sphere = InspectionSphere::new(10.0);
        let mut a = RandomBounded::new(1.0, 9);
        let mut b = RandomBounded::new(1.0, 9);
        for _ in 0..200 {
            let ua = a.control(&s, &sphere).unwrap();
            assert_eq!(ua, b.control(&s, &sphere).unwrap());
            assert!(ua.0.amax() <= 1.0);
        }
    }

    #[test]
    fn zero_controller() {
        let s = RelativeState::new(Vector3::new(50.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let u = ZeroController.control(&s, &InspectionSphere::new(10.0)).unwrap();
        assert_eq!(u, ControlVector::zero());
    }
}
