//! Active set invariance filter: the admissible thrust closest to the
//! primary controller's request that satisfies every barrier row.

use nalgebra::{Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{step, substeps, ControlVector, DynamicsParams, RelativeState};
use crate::error::{Error, Result};
use crate::qp::{infeasible_fallback, solve_qp, QpError};
use crate::safety::{cbf_rows, grad_h, h_values, AlphaGains, CbfRow, SafetyParams, NUM_CONSTRAINTS, SMOOTHING_FLOOR};

/// Deviation above which the filter counts as having intervened (N).
pub const INTERVENTION_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// Request after clamping to the actuation box.
    pub u_des: ControlVector,
    pub u_act: ControlVector,
    pub intervened: bool,
    /// `‖u_des − u_act‖₂` in newtons.
    pub deviation: f64,
    /// Active barrier indices at the solution, ascending.
    pub active_set: Vec<usize>,
    pub feasible: bool,
    /// Worst residual violation `max(0, −(c·u + b))` per barrier; zero when feasible.
    pub slack_used: [f64; NUM_CONSTRAINTS],
    /// Barrier values at the filtered state.
    pub h: [f64; NUM_CONSTRAINTS],
    /// Rows whose gradient hit the smoothing floor.
    pub smoothed: [bool; NUM_CONSTRAINTS],
    /// Constraint rows the final QP was solved over. The continuous filter
    /// has one per barrier; the sampled one has one per barrier per
    /// integrator step, with row `k` belonging to barrier `k % 6`.
    pub rows: Vec<CbfRow>,
}

/// Zero-order-hold interval the filtered thrust is held for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldModel {
    /// Filter period (s).
    pub period: f64,
    /// Integrator step used to predict the held motion (s).
    pub inner_step: f64,
}

impl HoldModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hold.period", self.period), ("hold.inner_step", self.inner_step)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and positive"));
            }
        }
        Ok(())
    }
}

/// Filter configuration; stateless between calls.
///
/// Without a hold model the rows are the continuous-time condition
/// `L_f h + L_g h·u + α(h) ≥ 0` at the current state. With one, each barrier
/// must stay above `e^(−γτ)·h(x)` at every integrator step `τ` of the hold
/// interval (see [`filter_sampled`]).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Asif {
    pub dynamics: DynamicsParams,
    pub safety: SafetyParams,
    pub alphas: AlphaGains,
    pub hold: Option<HoldModel>,
}

impl Asif {
    pub fn new(dynamics: DynamicsParams, safety: SafetyParams, alphas: AlphaGains) -> Result<Self> {
        dynamics.validate()?;
        safety.validate()?;
        alphas.validate()?;
        Ok(Self {
            dynamics,
            safety,
            alphas,
            hold: None,
        })
    }

    pub fn with_hold(mut self, hold: HoldModel) -> Result<Self> {
        hold.validate()?;
        self.hold = Some(hold);
        Ok(self)
    }

    pub fn filter(&self, state: &RelativeState, u_des: &ControlVector) -> Result<FilterResult> {
        match &self.hold {
            None => filter(state, u_des, &self.dynamics, &self.safety, &self.alphas),
            Some(hold) => filter_sampled(state, u_des, &self.dynamics, &self.safety, &self.alphas, hold),
        }
    }
}

fn check_inputs(state: &RelativeState, u_des: &ControlVector) -> Result<()> {
    if !u_des.is_finite() {
        return Err(Error::NonFinite("desired control"));
    }
    state.check_finite()
}

struct Solved {
    u: Vector3<f64>,
    active: Vec<usize>,
    feasible: bool,
    slack: [f64; NUM_CONSTRAINTS],
}

/// Solves over `rows`, where row `k` belongs to barrier `k % 6`; falls back
/// to the least-violation control when no admissible thrust exists.
fn solve_rows(request: &Vector3<f64>, rows: &[CbfRow], u_max: f64) -> Result<Solved> {
    if !rows.iter().all(|r| r.is_finite()) {
        return Err(Error::NonFinite("barrier rows"));
    }
    let barriers = |idx: &mut dyn Iterator<Item = usize>| {
        let mut a: Vec<usize> = idx.map(|k| k % NUM_CONSTRAINTS).collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    match solve_qp(request, rows, u_max) {
        Ok(sol) => Ok(Solved {
            active: barriers(&mut sol.active_rows(rows.len()).into_iter()),
            // the box is part of the QP, clamping only removes round-off
            u: sol.u.map(|f| f.clamp(-u_max, u_max)),
            feasible: true,
            slack: [0.0; NUM_CONSTRAINTS],
        }),
        Err(QpError::Infeasible(_) | QpError::IterationLimit) => {
            let fb = infeasible_fallback(request, rows, u_max);
            let mut slack = [0.0f64; NUM_CONSTRAINTS];
            for (k, v) in fb.slack_used.iter().enumerate() {
                let s = &mut slack[k % NUM_CONSTRAINTS];
                *s = s.max(*v);
            }
            Ok(Solved {
                u: fb.u,
                active: barriers(&mut (0..rows.len()).filter(|&k| fb.slack_used[k] > 0.0)),
                feasible: false,
                slack,
            })
        }
        Err(QpError::NonFinite) => Err(Error::NonFinite("barrier rows")),
    }
}

fn finish(
    request: ControlVector,
    solved: Solved,
    rows: Vec<CbfRow>,
    h: [f64; NUM_CONSTRAINTS],
    smoothed: [bool; NUM_CONSTRAINTS],
) -> FilterResult {
    let deviation = (request.0 - solved.u).norm();
    let intervened = deviation > INTERVENTION_THRESHOLD;
    FilterResult {
        u_des: request,
        u_act: ControlVector(if intervened { solved.u } else { request.0 }),
        intervened,
        deviation: if intervened { deviation } else { 0.0 },
        active_set: solved.active,
        feasible: solved.feasible,
        slack_used: solved.slack,
        h,
        smoothed,
        rows,
    }
}

/// Continuous-time filter: one QP over the rows at the current state.
pub fn filter(
    state: &RelativeState,
    u_des: &ControlVector,
    dynamics: &DynamicsParams,
    safety: &SafetyParams,
    alphas: &AlphaGains,
) -> Result<FilterResult> {
    check_inputs(state, u_des)?;
    let request = u_des.clamped(dynamics.u_max);
    let rows = cbf_rows(state, safety, dynamics, alphas);
    let solved = solve_rows(&request.0, &rows.rows, dynamics.u_max)?;
    Ok(finish(request, solved, rows.rows.to_vec(), rows.h, rows.smoothed))
}

/// Held-thrust prediction `x(τⱼ) = x⁰ⱼ + Nⱼ·u` at every integrator step of
/// the period, exact for the fixed-step integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldPrediction {
    /// Elapsed time at each step (s).
    pub times: Vec<f64>,
    /// Unforced state at each step.
    pub free: Vec<RelativeState>,
    /// Sensitivity of `[p, v]` at each step to the held thrust.
    pub input_maps: Vec<Matrix6x3<f64>>,
}

impl HoldPrediction {
    pub fn new(state: &RelativeState, dynamics: &DynamicsParams, hold: &HoldModel) -> Result<Self> {
        let n = substeps(hold.period, hold.inner_step)?;
        let dt = hold.period / n as f64;
        let mut free = Vec::with_capacity(n);
        let mut x = *state;
        for _ in 0..n {
            x = step(&x, &ControlVector::zero(), dt, dynamics)?;
            free.push(x);
        }
        let mut input_maps = vec![Matrix6x3::zeros(); n];
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = 1.0;
            let mut x = RelativeState::from_vector(&Vector6::zeros(), 0.0, 0.0);
            for map in input_maps.iter_mut() {
                x = step(&x, &ControlVector(e), dt, dynamics)?;
                map.set_column(j, &x.to_vector());
            }
        }
        let times = (1..=n).map(|k| k as f64 * dt).collect();
        Ok(Self {
            times,
            free,
            input_maps,
        })
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    /// Predicted state at step `k` under thrust `u`.
    pub fn at_step(&self, k: usize, u: &Vector3<f64>) -> RelativeState {
        let f = &self.free[k];
        RelativeState::from_vector(&(f.to_vector() + self.input_maps[k] * u), f.sun_angle, f.t)
    }

    /// Predicted state at the end of the hold.
    pub fn at(&self, u: &Vector3<f64>) -> RelativeState {
        self.at_step(self.len() - 1, u)
    }
}

/// `y·|y| / 2a`, the inverse of the signed square root in `h₁` and `h₂`.
fn inv_signed_sqrt(y: f64, a: f64) -> (f64, f64) {
    (y * y.abs() / (2.0 * a), y.abs() / a)
}

/// Range and range rate with their gradients in `[p, v]`.
fn range_terms(state: &RelativeState) -> (f64, Vector6<f64>, f64, Vector6<f64>) {
    let (p, v) = (&state.position, &state.velocity);
    let r = p.norm().max(SMOOTHING_FLOOR);
    let p_hat = p / r;
    let rdot = p_hat.dot(v);
    let mut d_r = Vector6::zeros();
    d_r.fixed_rows_mut::<3>(0).copy_from(&p_hat);
    let mut d_rdot = Vector6::zeros();
    d_rdot.fixed_rows_mut::<3>(0).copy_from(&((v - p_hat * rdot) / r));
    d_rdot.fixed_rows_mut::<3>(3).copy_from(&p_hat);
    (r, d_r, rdot, d_rdot)
}

/// Value and gradient of the hold condition for barrier `i` at a predicted
/// state, nonnegative exactly when `h_i(x) ≥ target`.
///
/// `h₁ ≥ t` is rewritten as `(r − r_min) − ψ(t − ṙ) ≥ 0` with `ψ` the inverse
/// of the signed square root (and likewise for `h₂`), which removes the
/// unbounded slope at the boundary without changing the feasible set.
fn hold_condition(i: usize, x: &RelativeState, target: f64, safety: &SafetyParams) -> (f64, Vector6<f64>, bool) {
    match i {
        0 | 1 => {
            let (r, d_r, rdot, d_rdot) = range_terms(x);
            let smoothed = x.position.norm() < SMOOTHING_FLOOR;
            if i == 0 {
                let (psi, dpsi) = inv_signed_sqrt(target - rdot, safety.a_max);
                (r - safety.collision_radius() - psi, d_r + d_rdot * dpsi, smoothed)
            } else {
                let (psi, dpsi) = inv_signed_sqrt(target + rdot, safety.a_max);
                (safety.r_max - r - psi, -d_r - d_rdot * dpsi, smoothed)
            }
        }
        _ => {
            let g = grad_h(x, safety, i);
            (h_values(x, safety)[i] - target, g.grad, g.smoothed)
        }
    }
}

/// Lower bound on `h_i` after `tau` seconds of hold: `e^(−γᵢτ)·h_i(x)`.
fn envelope(h_now: &[f64; NUM_CONSTRAINTS], alphas: &AlphaGains, i: usize, tau: f64) -> f64 {
    (1.0 - alphas.discrete_rate(i, tau)) * h_now[i]
}

/// Rows of the hold condition linearized at thrust `u_lin`, one per barrier
/// per integrator step; row `k·6 + i` belongs to barrier `i` at step `k`.
pub fn sampled_rows(
    h_now: &[f64; NUM_CONSTRAINTS],
    prediction: &HoldPrediction,
    u_lin: &Vector3<f64>,
    safety: &SafetyParams,
    alphas: &AlphaGains,
) -> (Vec<CbfRow>, [bool; NUM_CONSTRAINTS]) {
    let mut smoothed = [false; NUM_CONSTRAINTS];
    let mut rows = Vec::with_capacity(prediction.len() * NUM_CONSTRAINTS);
    for (k, &tau) in prediction.times.iter().enumerate() {
        let x_bar = prediction.at_step(k, u_lin);
        let map_t = prediction.input_maps[k].transpose();
        for (i, sm) in smoothed.iter_mut().enumerate() {
            let (value, grad, s) = hold_condition(i, &x_bar, envelope(h_now, alphas, i, tau), safety);
            *sm |= s;
            let c = map_t * grad;
            rows.push(CbfRow::new(c, value - c.dot(u_lin)));
        }
    }
    (rows, smoothed)
}

/// Worst margin `min h_i(x(τ)) − e^(−γᵢτ)·h_i(x)` over every step of the hold.
pub fn hold_margin(
    h_now: &[f64; NUM_CONSTRAINTS],
    prediction: &HoldPrediction,
    u: &Vector3<f64>,
    safety: &SafetyParams,
    alphas: &AlphaGains,
) -> f64 {
    let mut worst = f64::INFINITY;
    for (k, &tau) in prediction.times.iter().enumerate() {
        let h = h_values(&prediction.at_step(k, u), safety);
        for (i, hv) in h.iter().enumerate() {
            worst = worst.min(hv - envelope(h_now, alphas, i, tau));
        }
    }
    worst
}

/// Maximum relinearizations of the hold condition per call.
pub const MAX_SAMPLED_PASSES: usize = 8;
const SAMPLED_STEP_TOL: f64 = 1e-10;

/// Sampled-data filter for a thrust held over `hold.period`.
///
/// Each barrier must stay above `e^(−γτ)·h(x)` at every integrator step `τ`
/// of the hold, so the bound also covers the motion between filter calls.
/// The request is accepted as-is when it already meets the condition;
/// otherwise the condition is relinearized at each QP solution until the
/// thrust stops moving.
pub fn filter_sampled(
    state: &RelativeState,
    u_des: &ControlVector,
    dynamics: &DynamicsParams,
    safety: &SafetyParams,
    alphas: &AlphaGains,
    hold: &HoldModel,
) -> Result<FilterResult> {
    check_inputs(state, u_des)?;
    hold.validate()?;
    let request = u_des.clamped(dynamics.u_max);
    let h_now = h_values(state, safety);
    let prediction = HoldPrediction::new(state, dynamics, hold)?;
    let mut smoothed = cbf_rows(state, safety, dynamics, alphas).smoothed;

    let mut u_lin = request.0;
    let (mut rows, mut sm) = sampled_rows(&h_now, &prediction, &u_lin, safety, alphas);
    let mut solved = solve_rows(&request.0, &rows, dynamics.u_max)?;
    for _ in 1..MAX_SAMPLED_PASSES {
        if (solved.u - u_lin).amax() <= SAMPLED_STEP_TOL {
            break;
        }
        u_lin = solved.u;
        (rows, sm) = sampled_rows(&h_now, &prediction, &u_lin, safety, alphas);
        solved = solve_rows(&request.0, &rows, dynamics.u_max)?;
    }
    for (s, b) in smoothed.iter_mut().zip(sm) {
        *s |= b;
    }
    Ok(finish(request, solved, rows, h_now, smoothed))
}

/// Residual of every row at `u`; negative entries are violations.
pub fn row_slacks(
    state: &RelativeState,
    u: &Vector3<f64>,
    dynamics: &DynamicsParams,
    safety: &SafetyParams,
    alphas: &AlphaGains,
) -> [f64; NUM_CONSTRAINTS] {
    cbf_rows(state, safety, dynamics, alphas).rows.map(|r| r.slack(u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(p: [f64; 3], v: [f64; 3]) -> RelativeState {
        RelativeState::new(Vector3::from(p), Vector3::from(v), 0.0)
    }

    #[test]
    fn passes_safe_request_through() {
        let asif = Asif::default();
        let u = ControlVector::new(0.1, -0.2, 0.05);
        let r = asif.filter(&st([100.0, 0.0, 0.0], [0.0; 3]), &u).unwrap();
        assert_eq!(r.u_act, u);
        assert!(!r.intervened);
        assert_eq!(r.deviation, 0.0);
        assert!(r.feasible);
    }

    #[test]
    fn velocity_boundary_blocks_acceleration() {
        let asif = Asif::default();
        let r = asif
            .filter(
                &st([0.0, 500.0, 0.0], [1.0, 0.0, 0.0]),
                &ControlVector::new(1.0, 0.0, 0.0),
            )
            .unwrap();
        // radial offset zero: h4 = 0 and L_f h4 = 0, so the row reads −Fx/6 ≥ 0;
        // at 500 m every other barrier is slack
        assert!(r.u_act.0.norm() < 1e-12, "{:?}", r.u_act);
        assert!(r.intervened);
        assert!((r.deviation - 1.0).abs() < 1e-12);
        assert!(r.active_set.contains(&3));
    }

    #[test]
    fn request_is_clamped_before_filtering() {
        let asif = Asif::default();
        let r = asif
            .filter(&st([100.0, 0.0, 0.0], [0.0; 3]), &ControlVector::new(3.0, 0.0, -2.0))
            .unwrap();
        assert_eq!(r.u_des, ControlVector::new(1.0, 0.0, -1.0));
    }

    #[test]
    fn rejects_non_finite_request() {
        let asif = Asif::default();
        let u = ControlVector::new(f64::NAN, 0.0, 0.0);
        assert!(asif.filter(&st([100.0, 0.0, 0.0], [0.0; 3]), &u).is_err());
    }

    #[test]
    fn infeasible_state_uses_fallback() {
        // far inside the collision zone, closing fast: no admissible thrust brakes enough
        let asif = Asif::default();
        let s = st([9.0, 0.0, 0.0], [-0.9, 0.9, 0.9]);
        let r = asif.filter(&s, &ControlVector::new(-1.0, 0.0, 0.0)).unwrap();
        assert!(!r.feasible);
        assert!(r.slack_used.iter().any(|&v| v > 0.0));
        assert!(r.u_act.0.amax() <= 1.0);
        // least violation pushes outward
        assert!(r.u_act.0.x > 0.0);
    }

    #[test]
    fn filtered_control_satisfies_rows() {
        let asif = Asif::default();
        let s = st([15.0, 3.0, -2.0], [-0.3, 0.1, 0.0]);
        let r = asif.filter(&s, &ControlVector::new(-1.0, -0.5, 0.2)).unwrap();
        assert!(r.feasible);
        let slacks = row_slacks(&s, &r.u_act.0, &asif.dynamics, &asif.safety, &asif.alphas);
        assert!(slacks.iter().all(|&v| v >= -1e-8), "{slacks:?}");
    }

    fn sampled() -> Asif {
        Asif::default()
            .with_hold(HoldModel {
                period: 2.0,
                inner_step: 0.2,
            })
            .unwrap()
    }

    #[test]
    fn sampled_accepts_safe_request() {
        let u = ControlVector::new(0.1, -0.2, 0.05);
        let r = sampled().filter(&st([100.0, 0.0, 0.0], [0.0; 3]), &u).unwrap();
        assert_eq!(r.u_act, u);
        assert!(!r.intervened);
        assert_eq!(r.rows.len(), 10 * NUM_CONSTRAINTS);
    }

    #[test]
    fn prediction_matches_integrator() {
        let asif = sampled();
        let hold = asif.hold.unwrap();
        let s = st([40.0, -12.0, 7.0], [0.2, -0.1, 0.05]);
        let u = Vector3::new(0.3, -0.7, 0.1);
        let pred = HoldPrediction::new(&s, &asif.dynamics, &hold).unwrap();
        let mut x = s;
        for k in 0..pred.len() {
            x = step(&x, &ControlVector(u), 0.2, &asif.dynamics).unwrap();
            let err = (x.to_vector() - pred.at_step(k, &u).to_vector()).amax();
            assert!(err < 1e-12, "step {k}: {err}");
        }
    }

    #[test]
    fn sampled_filter_keeps_hold_envelope() {
        // closing on the collision sphere and on the speed limit
        let asif = sampled();
        let hold = asif.hold.unwrap();
        for (p, v, u) in [
            ([12.0, 0.0, 0.0], [-0.2, 0.0, 0.0], [-1.0, 0.0, 0.0]),
            ([0.0, 30.0, 5.0], [0.1, -0.18, 0.0], [0.5, -1.0, 0.3]),
            ([0.0, 500.0, 0.0], [0.97, 0.0, 0.0], [1.0, 0.0, 0.0]),
        ] {
            let s = st(p, v);
            let r = asif.filter(&s, &ControlVector(Vector3::from(u))).unwrap();
            assert!(r.feasible, "{p:?} {:?}", r.slack_used);
            assert!(r.intervened, "{p:?}");
            let pred = HoldPrediction::new(&s, &asif.dynamics, &hold).unwrap();
            let h_now = h_values(&s, &asif.safety);
            let margin = hold_margin(&h_now, &pred, &r.u_act.0, &asif.safety, &asif.alphas);
            assert!(margin > -1e-9, "{p:?}: {margin}");
        }
    }
}
