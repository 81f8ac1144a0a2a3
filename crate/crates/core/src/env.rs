//! Episodic inspection environment: normalized observations, Δv accounting
//! and the per-step reward.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_zoh, wrap_angle, ControlVector, DynamicsParams, RelativeState, DEFAULT_INNER_STEP};
use crate::error::{Error, Result};
use crate::inspection::{
    nearest_uninspected_cluster, InspectionSphere, CHIEF_RADIUS, DEFAULT_CLUSTERS, DEFAULT_CLUSTER_SEED, NUM_POINTS,
};

pub const POSITION_NORM: f64 = 100.0;
pub const VELOCITY_NORM: f64 = 2.0;
pub const POINTS_NORM: f64 = 100.0;
pub const REWARD_WEIGHT: f64 = 0.1;
pub const ENV_STEP: f64 = 10.0;
pub const MAX_EPISODE_STEPS: usize = 1223;

/// `[x, y, z, ẋ, ẏ, ż, θ]` used by every experiment.
pub const REFERENCE_INITIAL_STATE: [f64; 7] = [21.8, -11.3, 41.8, 0.0, 0.0, 0.0, 3.42];

pub fn reference_initial_state() -> RelativeState {
    let s = REFERENCE_INITIAL_STATE;
    RelativeState::new(Vector3::new(s[0], s[1], s[2]), Vector3::new(s[3], s[4], s[5]), s[6])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    NoSensors,
    AllSensors,
}

impl ObservationMode {
    /// Observation vector length.
    pub fn dim(self) -> usize {
        match self {
            Self::NoSensors => 6,
            Self::AllSensors => 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub mode: ObservationMode,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Position (m) and velocity (m/s) recovered from the first six entries.
    pub fn denormalize(&self) -> (Vector3<f64>, Vector3<f64>) {
        let v = &self.values;
        (
            Vector3::new(v[0], v[1], v[2]) * POSITION_NORM,
            Vector3::new(v[3], v[4], v[5]) / VELOCITY_NORM,
        )
    }
}

/// Observation of a state and inspection progress.
pub fn observation(state: &RelativeState, sphere: &InspectionSphere, mode: ObservationMode) -> Observation {
    let p = state.position / POSITION_NORM;
    let v = state.velocity * VELOCITY_NORM;
    let mut values = vec![p.x, p.y, p.z, v.x, v.y, v.z];
    if mode == ObservationMode::AllSensors {
        let ups =
            nearest_uninspected_cluster(sphere, &state.position, DEFAULT_CLUSTERS, DEFAULT_CLUSTER_SEED).direction;
        values.extend([
            sphere.inspected_count() as f64 / POINTS_NORM,
            wrap_angle(state.sun_angle),
            ups.x,
            ups.y,
            ups.z,
        ]);
    }
    Observation { mode, values }
}

/// `(|Fx| + |Fy| + |Fz|) / m · dt`.
pub fn delta_v(action: &ControlVector, dt: f64, mass: f64) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidTimeStep(dt));
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::invalid("mass", "must be positive"));
    }
    Ok(action.l1_norm() / mass * dt)
}

/// Episode reward from its totals.
pub fn cumulative_reward(inspected: f64, delta_v: f64) -> f64 {
    REWARD_WEIGHT * inspected - REWARD_WEIGHT * delta_v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub initial_state: RelativeState,
    pub mode: ObservationMode,
    pub illumination: bool,
    pub dynamics: DynamicsParams,
    pub step_duration: f64,
    pub inner_step: f64,
    pub max_steps: usize,
    /// Gaussian spread applied to the initial position on reset (m).
    pub initial_position_sigma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_state: reference_initial_state(),
            mode: ObservationMode::NoSensors,
            illumination: false,
            dynamics: DynamicsParams::default(),
            step_duration: ENV_STEP,
            inner_step: DEFAULT_INNER_STEP,
            max_steps: MAX_EPISODE_STEPS,
            initial_position_sigma: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.initial_state.check_finite()?;
        for (name, v) in [("step_duration", self.step_duration), ("inner_step", self.inner_step)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.max_steps == 0 || self.max_steps > MAX_EPISODE_STEPS {
            return Err(Error::invalid("max_steps", "must be in 1..=1223"));
        }
        if !(self.initial_position_sigma >= 0.0) || !self.initial_position_sigma.is_finite() {
            return Err(Error::invalid("initial_position_sigma", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub newly_inspected: usize,
    pub inspected: usize,
    pub step_delta_v: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub inspected: usize,
    pub delta_v: f64,
    pub reward: f64,
    pub steps: usize,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    config: EnvConfig,
    state: RelativeState,
    sphere: InspectionSphere,
    delta_v: f64,
    reward: f64,
    steps: usize,
    done: bool,
}

/// Starts a fresh episode and returns it with its first observation.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<(Episode, Observation)> {
    config.validate()?;
    let mut state = config.initial_state;
    state.t = 0.0;
    if config.initial_position_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.initial_position_sigma)
            .map_err(|e| Error::invalid("initial_position_sigma", e.to_string()))?;
        state.position += Vector3::from_fn(|_, _| normal.sample(&mut rng));
    }
    let episode = Episode {
        config: config.clone(),
        state,
        sphere: InspectionSphere::new(CHIEF_RADIUS),
        delta_v: 0.0,
        reward: 0.0,
        steps: 0,
        done: false,
    };
    let obs = episode.observe(config.mode);
    Ok((episode, obs))
}

impl Episode {
    pub fn state(&self) -> &RelativeState {
        &self.state
    }

    pub fn sphere(&self) -> &InspectionSphere {
        &self.sphere
    }

    pub fn delta_v(&self) -> f64 {
        self.delta_v
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self, mode: ObservationMode) -> Observation {
        observation(&self.state, &self.sphere, mode)
    }

    /// Holds `action` (clamped to the box) for one environment step.
    pub fn step(&mut self, action: &ControlVector) -> Result<(Observation, f64, bool, StepInfo)> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if !action.is_finite() {
            return Err(Error::NonFinite("action"));
        }
        let cfg = &self.config;
        let u = action.clamped(cfg.dynamics.u_max);
        self.state = propagate_zoh(&self.state, &u, cfg.step_duration, cfg.inner_step, &cfg.dynamics)?;
        let newly = self
            .sphere
            .update_inspected(&self.state.position, self.state.sun_angle, cfg.illumination);
        let dv = delta_v(&u, cfg.step_duration, cfg.dynamics.mass)?;
        let reward = REWARD_WEIGHT * newly as f64 - REWARD_WEIGHT * dv;
        self.delta_v += dv;
        self.reward += reward;
        self.steps += 1;
        self.done = self.sphere.all_inspected() || self.steps >= cfg.max_steps;
        let info = StepInfo {
            newly_inspected: newly,
            inspected: self.sphere.inspected_count(),
            step_delta_v: dv,
            step: self.steps,
        };
        Ok((self.observe(cfg.mode), reward, self.done, info))
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            inspected: self.sphere.inspected_count(),
            delta_v: self.delta_v,
            reward: self.reward,
            steps: self.steps,
            success: self.sphere.inspected_count() == NUM_POINTS,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_observation_matches_initial_state() {
        let (_, obs) = reset(&EnvConfig::default(), 0).unwrap();
        let want = [0.218, -0.113, 0.418, 0.0, 0.0, 0.0];
        assert_eq!(obs.values.len(), 6);
        for (g, w) in obs.values.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn all_sensors_observation_fresh_episode() {
        let cfg = EnvConfig {
            mode: ObservationMode::AllSensors,
            ..EnvConfig::default()
        };
        let (_, obs) = reset(&cfg, 0).unwrap();
        assert_eq!(obs.values.len(), 11);
        assert_eq!(obs.values[6], 0.0);
        assert!((obs.values[7] - 3.42).abs() < 1e-15);
        let ups = Vector3::new(obs.values[8], obs.values[9], obs.values[10]);
        assert!((ups.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_observation() {
        let cfg = EnvConfig {
            initial_position_sigma: 2.0,
            ..EnvConfig::default()
        };
        let (_, a) = reset(&cfg, 11).unwrap();
        let (_, b) = reset(&cfg, 11).unwrap();
        let (_, c) = reset(&cfg, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn delta_v_arithmetic() {
        assert_eq!(delta_v(&ControlVector::zero(), 10.0, 12.0).unwrap(), 0.0);
        assert!((delta_v(&ControlVector::new(1.0, 1.0, 1.0), 10.0, 12.0).unwrap() - 2.5).abs() < 1e-15);
        let u = ControlVector::new(0.3, -0.2, 0.1);
        let one = delta_v(&u, 1.0, 12.0).unwrap();
        assert!((delta_v(&u, 7.0, 12.0).unwrap() - 7.0 * one).abs() < 1e-15);
        assert!(delta_v(&u, 0.0, 12.0).is_err());
        assert!(delta_v(&u, 1.0, -1.0).is_err());
    }

    #[test]
    fn step_reward_for_fixed_action() {
        let (mut ep, _) = reset(&EnvConfig::default(), 0).unwrap();
        let (_, reward, done, info) = ep.step(&ControlVector::new(1.0, -1.0, 0.5)).unwrap();
        assert!((info.step_delta_v - 2.5 / 12.0 * 10.0).abs() < 1e-12);
        let expected = 0.1 * info.newly_inspected as f64 - 0.1 * 2.5 / 12.0 * 10.0;
        assert!((reward - expected).abs() < 1e-12);
        assert!(!done);
    }

    #[test]
    fn zero_action_without_new_points_gives_zero_reward() {
        let (mut ep, _) = reset(&EnvConfig::default(), 0).unwrap();
        // first step marks everything visible from the start
        ep.step(&ControlVector::zero()).unwrap();
        let (_, reward, _, info) = ep.step(&ControlVector::zero()).unwrap();
        assert_eq!(info.newly_inspected, 0);
        assert_eq!(reward, 0.0);
    }

    #[test]
    fn observation_normalizations() {
        let sphere = InspectionSphere::new(10.0);
        let origin = RelativeState::new(Vector3::zeros(), Vector3::zeros(), 0.0);
        assert!(observation(&origin, &sphere, ObservationMode::NoSensors)
            .values
            .iter()
            .all(|&v| v == 0.0));
        let s = RelativeState::new(Vector3::zeros(), Vector3::new(0.5, 0.0, 0.0), 0.0);
        assert_eq!(observation(&s, &sphere, ObservationMode::NoSensors).values[3], 1.0);
    }

    #[test]
    fn inspected_fraction_in_observation() {
        // deputy far out on +x marks the facing hemisphere only
        let mut sphere = InspectionSphere::new(10.0);
        let s = RelativeState::new(Vector3::new(1e6, 0.0, 0.0), Vector3::zeros(), 0.0);
        let n = sphere.update_inspected(&s.position, 0.0, false);
        let obs = observation(&s, &sphere, ObservationMode::AllSensors);
        assert_eq!(obs.values[6], n as f64 / 100.0);
    }

    #[test]
    fn done_is_sticky_and_bounded() {
        let cfg = EnvConfig {
            max_steps: 3,
            ..EnvConfig::default()
        };
        let (mut ep, _) = reset(&cfg, 0).unwrap();
        for _ in 0..3 {
            ep.step(&ControlVector::zero()).unwrap();
        }
        assert!(ep.is_done());
        assert!(matches!(ep.step(&ControlVector::zero()), Err(Error::EpisodeDone)));
        assert_eq!(ep.steps(), 3);
    }

    #[test]
    fn table_rewards_follow_from_totals() {
        assert!((cumulative_reward(95.3, 36.2) - 5.91).abs() < 1e-12);
    }
}
