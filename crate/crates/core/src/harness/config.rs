use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::REFERENCE_INITIAL_STATE;
use crate::error::{Error, Result};
use crate::safety::AlphaGains;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    NncNoSensors,
    NncAllSensors,
    BestNncNoSensors,
    BestNncAllSensors,
    Lqr,
    Scripted,
}

impl ControllerKind {
    pub fn is_nnc(self) -> bool {
        matches!(
            self,
            Self::NncNoSensors | Self::NncAllSensors | Self::BestNncNoSensors | Self::BestNncAllSensors
        )
    }

    /// Observation length a policy for this slot must accept.
    pub fn input_dim(self) -> Option<usize> {
        match self {
            Self::NncNoSensors | Self::BestNncNoSensors => Some(6),
            Self::NncAllSensors | Self::BestNncAllSensors => Some(11),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NncNoSensors => "nnc_no_sensors",
            Self::NncAllSensors => "nnc_all_sensors",
            Self::BestNncNoSensors => "best_nnc_no_sensors",
            Self::BestNncAllSensors => "best_nnc_all_sensors",
            Self::Lqr => "lqr",
            Self::Scripted => "scripted",
        }
    }
}

/// Barrier condition the filter enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterModel {
    /// End-of-hold condition over the control period.
    #[default]
    Sampled,
    /// Instantaneous continuous-time rows.
    Continuous,
}

/// Largest seed a config file can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Sensed position error σ (m).
    pub position_sigma: f64,
    /// Sensed velocity error σ (m/s).
    pub velocity_sigma: f64,
    /// Plant disturbance acceleration σ per axis (m/s²), redrawn every control period.
    pub disturbance_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            position_sigma: 0.5,
            velocity_sigma: 0.02,
            disturbance_sigma: 1e-4,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn zero(seed: u64) -> Self {
        Self {
            position_sigma: 0.0,
            velocity_sigma: 0.0,
            disturbance_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise.position_sigma", self.position_sigma),
            ("noise.velocity_sigma", self.velocity_sigma),
            ("noise.disturbance_sigma", self.disturbance_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and non-negative"));
            }
        }
        // TOML integers are i64; larger seeds could not be written back to a config
        if self.seed > MAX_SEED {
            return Err(Error::invalid("noise.seed", format!("must be at most {MAX_SEED}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub controller: ControllerKind,
    pub rta_enabled: bool,
    pub illumination: bool,
    /// Space metres per lab metre.
    pub position_scale: f64,
    /// Space seconds per lab second.
    pub time_scale: f64,
    /// Controller and filter rate in the space frame (Hz).
    pub control_rate: f64,
    /// Upper bound on the integrator rate (Hz).
    pub sim_rate: f64,
    /// Space-frame duration limit (s).
    pub max_duration: f64,
    /// Feed sensed (noisy) state to the controller and filter and disturb the plant.
    #[serde(default)]
    pub closed_loop: bool,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Stop once every inspection point has been seen.
    #[serde(default = "default_true")]
    pub stop_on_complete: bool,
    /// `[x, y, z, ẋ, ẏ, ż, θ]`.
    #[serde(default = "default_initial_state")]
    pub initial_state: [f64; 7],
    #[serde(default)]
    pub alphas: AlphaGains,
    #[serde(default)]
    pub filter_model: FilterModel,
    /// Lab volume `[x, y, z]` in metres, centred on the chief.
    #[serde(default = "default_aviary")]
    pub aviary: [f64; 3],
    /// Policy weights for NNC controllers; without them the scripted orbit stands in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

fn default_initial_state() -> [f64; 7] {
    REFERENCE_INITIAL_STATE
}

fn default_aviary() -> [f64; 3] {
    [8.0, 8.0, 4.0]
}

pub const NUM_EXPERIMENTS: u8 = 6;

/// The six lab experiments.
pub fn default_experiment(n: u8) -> Result<ExperimentConfig> {
    use ControllerKind::*;
    let (controller, rta, illumination, pos, time) = match n {
        1 => (NncNoSensors, false, false, 65.0, 10.0),
        2 => (Lqr, true, false, 65.0, 10.0),
        3 => (NncNoSensors, true, false, 65.0, 10.0),
        4 => (NncAllSensors, false, true, 300.0, 20.0),
        5 => (BestNncNoSensors, true, true, 65.0, 15.0),
        6 => (BestNncAllSensors, true, true, 100.0, 20.0),
        _ => return Err(Error::Config(format!("experiment must be 1..=6, got {n}"))),
    };
    Ok(ExperimentConfig {
        name: format!("experiment{n}"),
        controller,
        rta_enabled: rta,
        illumination,
        position_scale: pos,
        time_scale: time,
        control_rate: 0.5,
        sim_rate: 5.0,
        max_duration: 6000.0,
        closed_loop: false,
        noise: NoiseModel::default(),
        stop_on_complete: true,
        initial_state: REFERENCE_INITIAL_STATE,
        alphas: AlphaGains::default(),
        filter_model: FilterModel::Sampled,
        aviary: default_aviary(),
        weights: None,
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("position_scale", self.position_scale),
            ("time_scale", self.time_scale),
            ("control_rate", self.control_rate),
            ("sim_rate", self.sim_rate),
            ("max_duration", self.max_duration),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and positive"));
            }
        }
        if self.control_rate > self.sim_rate {
            return Err(Error::invalid("control_rate", "must not exceed sim_rate"));
        }
        if !self.initial_state.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("initial_state", "must be finite"));
        }
        if !self.aviary.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("aviary", "dimensions must be positive"));
        }
        self.noise.validate()?;
        self.alphas.validate()
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate
    }

    /// Number of control periods that fit in `max_duration`.
    pub fn max_steps(&self) -> usize {
        (self.max_duration * self.control_rate + 1e-9).floor() as usize
    }
}

/// Parses a TOML document. An optional `base_experiment = N` key selects the
/// table row the document is merged over; otherwise every field is required.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let merged = match doc.remove("base_experiment") {
        Some(v) => {
            let n = v
                .as_integer()
                .and_then(|n| u8::try_from(n).ok())
                .ok_or_else(|| Error::Config("base_experiment must be an integer 1..=6".into()))?;
            let base = default_experiment(n)?;
            let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut table, doc);
            table
        }
        None => doc,
    };
    let cfg: ExperimentConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    // relative weight paths are taken relative to the config file
    if let (Some(w), Some(dir)) = (&cfg.weights, path.parent()) {
        if w.is_relative() {
            cfg.weights = Some(dir.join(w));
        }
    }
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}
