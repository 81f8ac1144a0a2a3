use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ControllerKind, ExperimentConfig, FilterModel};
use super::log::{Record, RunSummary, TrajectoryLog};
use super::noise::{disturbance, inject_noise};
use crate::control::{Controller, LqrController, MlpPolicy, ScriptedOrbit};
use crate::dynamics::{space_to_lab, step, substeps, ControlVector, DynamicsParams, RelativeState};
use crate::env::{cumulative_reward, observation, ObservationMode};
use crate::error::{Error, Result};
use crate::inspection::{InspectionSphere, CHIEF_RADIUS, NUM_POINTS};
use crate::rta::{Asif, HoldModel};
use crate::safety::{h_values, SafetyParams};

/// MLP policy wired to the environment's observation.
#[derive(Debug, Clone)]
pub struct NncController {
    pub policy: MlpPolicy,
    pub mode: ObservationMode,
    pub u_max: f64,
}

impl Controller for NncController {
    fn control(&mut self, state: &RelativeState, sphere: &InspectionSphere) -> Result<ControlVector> {
        let obs = observation(state, sphere, self.mode);
        self.policy.act(obs.as_slice(), self.u_max)
    }

    fn name(&self) -> &str {
        "nnc"
    }
}

/// Builds the primary controller named by the config. NNC slots without
/// weights fall back to the scripted circumnavigation.
pub fn build_controller(cfg: &ExperimentConfig, params: &DynamicsParams) -> Result<Box<dyn Controller + Send>> {
    Ok(match cfg.controller {
        ControllerKind::Lqr => Box::new(LqrController::with_defaults(params)?),
        ControllerKind::Scripted => Box::new(ScriptedOrbit::xz_default(*params)),
        kind => match &cfg.weights {
            None => Box::new(ScriptedOrbit::xz_default(*params)),
            Some(path) => {
                let policy = MlpPolicy::from_path(path)?;
                let want = kind.input_dim().expect("NNC kinds have an input size");
                if policy.input_dim() != want {
                    return Err(Error::Config(format!(
                        "{} expects a {want}-input policy, {} has {}",
                        kind.as_str(),
                        path.display(),
                        policy.input_dim()
                    )));
                }
                let mode = if want == 6 {
                    ObservationMode::NoSensors
                } else {
                    ObservationMode::AllSensors
                };
                Box::new(NncController {
                    policy,
                    mode,
                    u_max: params.u_max,
                })
            }
        },
    })
}

/// Label for the controller actually used.
pub fn controller_label(cfg: &ExperimentConfig) -> String {
    if cfg.controller.is_nnc() && cfg.weights.is_none() {
        format!("{} (scripted stand-in)", cfg.controller.as_str())
    } else {
        cfg.controller.as_str().to_string()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub summary: RunSummary,
    pub final_state: RelativeState,
}

/// Runs the experiment with the controller it names.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let params = DynamicsParams::default();
    let mut controller = build_controller(cfg, &params)?;
    run_with_controller(cfg, controller.as_mut(), &controller_label(cfg))
}

/// Runs the experiment loop with a caller-supplied primary controller.
pub fn run_with_controller(cfg: &ExperimentConfig, controller: &mut dyn Controller, label: &str) -> Result<RunOutput> {
    cfg.validate()?;
    let params = DynamicsParams::default();
    let safety = SafetyParams::default();
    let period = cfg.control_period();
    let inner = 1.0 / cfg.sim_rate;
    let asif = Asif::new(params, safety, cfg.alphas)?;
    let asif = match cfg.filter_model {
        FilterModel::Sampled => asif.with_hold(HoldModel {
            period,
            inner_step: inner,
        })?,
        FilterModel::Continuous => asif,
    };
    let n_sub = substeps(period, inner)?;
    let dt = period / n_sub as f64;
    let min_of = |h: [f64; 6]| h.iter().copied().fold(f64::INFINITY, f64::min);
    let s0 = cfg.initial_state;
    let mut state = RelativeState::new(
        Vector3::new(s0[0], s0[1], s0[2]),
        Vector3::new(s0[3], s0[4], s0[5]),
        s0[6],
    );
    let mut sphere = InspectionSphere::new(CHIEF_RADIUS);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut delta_v = 0.0;
    let mut records = Vec::with_capacity(cfg.max_steps());
    let mut min_range = state.range();
    let mut min_h = min_of(h_values(&state, &safety));
    let mut extent = [0.0f64; 3];
    let mut track_lab = |s: &RelativeState| -> Result<()> {
        let lab = space_to_lab(s, cfg.position_scale, cfg.time_scale)?;
        for (e, p) in extent.iter_mut().zip(lab.position.iter()) {
            *e = e.max(p.abs());
        }
        Ok(())
    };
    track_lab(&state)?;

    for k in 0..cfg.max_steps() {
        let sensed = if cfg.closed_loop {
            inject_noise(&state, &cfg.noise, &mut rng)
        } else {
            state
        };
        let u_des = controller.control(&sensed, &sphere)?;
        if !u_des.is_finite() {
            return Err(Error::NonFinite("controller output"));
        }
        let (u_des, u_act, intervened, deviation, feasible) = if cfg.rta_enabled {
            let f = asif.filter(&sensed, &u_des)?;
            (f.u_des, f.u_act, f.intervened, f.deviation, f.feasible)
        } else {
            let u = u_des.clamped(params.u_max);
            (u, u, false, 0.0, true)
        };
        records.push(Record {
            t: k as f64 * period,
            state: [
                state.position.x,
                state.position.y,
                state.position.z,
                state.velocity.x,
                state.velocity.y,
                state.velocity.z,
                state.sun_angle,
            ],
            u_des: u_des.0.into(),
            u_act: u_act.0.into(),
            h: h_values(&state, &safety),
            intervened,
            deviation,
            feasible,
            n_p: sphere.inspected_count(),
            delta_v,
        });

        let mut applied = u_act;
        if cfg.closed_loop {
            let d = disturbance(&cfg.noise, &mut rng);
            if d != Vector3::zeros() {
                applied = ControlVector(u_act.0 + d * params.mass);
            }
        }
        delta_v += u_act.l1_norm() / params.mass * period;
        for _ in 0..n_sub {
            state = step(&state, &applied, dt, &params)?;
            min_range = min_range.min(state.range());
            min_h = min_h.min(min_of(h_values(&state, &safety)));
            track_lab(&state)?;
        }
        // keep the clock on the control grid instead of accumulating round-off
        state.t = (k + 1) as f64 * period;
        sphere.update_inspected(&state.position, state.sun_angle, cfg.illumination);
        if cfg.stop_on_complete && sphere.all_inspected() {
            break;
        }
    }

    if records.is_empty() {
        return Err(Error::EmptyLog);
    }
    let half = cfg.aviary.map(|d| d / 2.0);
    let inspected = sphere.inspected_count();
    let summary = RunSummary {
        name: cfg.name.clone(),
        controller: label.to_string(),
        rta_enabled: cfg.rta_enabled,
        closed_loop: cfg.closed_loop,
        seed: cfg.noise.seed,
        steps: records.len(),
        duration: state.t,
        inspected,
        delta_v,
        reward: cumulative_reward(inspected as f64, delta_v),
        success: inspected == NUM_POINTS,
        min_range,
        final_range: state.range(),
        min_h,
        interventions: records.iter().filter(|r| r.intervened).count(),
        infeasible_steps: records.iter().filter(|r| !r.feasible).count(),
        lab_extent: extent,
        lab_feasible: extent.iter().zip(half).all(|(e, h)| *e <= h),
    };
    Ok(RunOutput {
        log: TrajectoryLog {
            config: cfg.clone(),
            records,
        },
        summary,
        final_state: state,
    })
}
