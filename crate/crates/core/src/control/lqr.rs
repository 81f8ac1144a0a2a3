use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, Matrix6x3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlVector, DynamicsParams, RelativeState};
use crate::error::{Error, Result};

pub const MAX_RICCATI_ITERATIONS: usize = 10_000;
const RICCATI_REL_TOL: f64 = 1e-14;

/// Linear-quadratic regulator driving the deputy to the origin of Hill's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrController {
    pub gain: Matrix3x6<f64>,
    pub q: Matrix6<f64>,
    pub r: Matrix3<f64>,
    /// Stabilizing solution of the continuous algebraic Riccati equation.
    pub p: Matrix6<f64>,
    pub u_max: f64,
}

impl LqrController {
    pub fn default_weights() -> (Matrix6<f64>, Matrix3<f64>) {
        (Matrix6::identity() * 1e-3, Matrix3::identity())
    }

    pub fn with_defaults(params: &DynamicsParams) -> Result<Self> {
        let (q, r) = Self::default_weights();
        lqr_design(params, &q, &r)
    }

    pub fn control(&self, state: &RelativeState) -> ControlVector {
        lqr_control(self, state)
    }

    pub fn closed_loop(&self, params: &DynamicsParams) -> Matrix6<f64> {
        params.a_matrix() - params.b_matrix() * self.gain
    }
}

/// Solves the Riccati equation by Newton-Kleinman iteration and returns
/// `K = R⁻¹BᵀP`.
pub fn lqr_design(params: &DynamicsParams, q: &Matrix6<f64>, r: &Matrix3<f64>) -> Result<LqrController> {
    params.validate()?;
    let q = (q + q.transpose()) * 0.5;
    let r = (r + r.transpose()) * 0.5;
    if q.symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::invalid("Q", "must be positive semidefinite"));
    }
    let r_inv = r
        .cholesky()
        .ok_or_else(|| Error::invalid("R", "must be positive definite"))?
        .inverse();

    let a = params.a_matrix();
    let b = params.b_matrix();

    // PD on top of cancelling the natural acceleration: A − B·K₀ is a stable
    // double integrator in every axis
    let m = params.mass;
    let omega = 0.01;
    let mut k = params.a_lower() * m;
    for i in 0..3 {
        k[(i, i)] += m * omega * omega;
        k[(i, i + 3)] += m * 2.0 * omega;
    }

    let mut p_prev: Option<Matrix6<f64>> = None;
    for _ in 0..MAX_RICCATI_ITERATIONS {
        let acl = a - b * k;
        let p = solve_lyapunov(&acl, &(q + k.transpose() * r * k))?;
        k = r_inv * b.transpose() * p;
        if let Some(prev) = p_prev {
            if (p - prev).norm() <= RICCATI_REL_TOL * p.norm().max(1.0) {
                return finish(params, q, r, p, k);
            }
        }
        p_prev = Some(p);
    }
    Err(Error::RiccatiNonConvergence(MAX_RICCATI_ITERATIONS))
}

fn finish(
    params: &DynamicsParams,
    q: Matrix6<f64>,
    r: Matrix3<f64>,
    p: Matrix6<f64>,
    gain: Matrix3x6<f64>,
) -> Result<LqrController> {
    let ctrl = LqrController {
        gain,
        q,
        r,
        p,
        u_max: params.u_max,
    };
    let max_re = ctrl
        .closed_loop(params)
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(Error::NotHurwitz(max_re));
    }
    Ok(ctrl)
}

/// Solves `AᵀP + PA + M = 0` through its Kronecker form.
fn solve_lyapunov(a: &Matrix6<f64>, m: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    const N: usize = 6;
    let mut big = DMatrix::<f64>::zeros(N * N, N * N);
    // vec(AᵀP + PA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P), column-major vec
    for i in 0..N {
        for j in 0..N {
            for k in 0..N {
                big[(i + N * j, k + N * j)] += a[(k, i)];
                big[(i + N * j, i + N * k)] += a[(k, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(N * N, m.iter().map(|v| -v));
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("closed loop", "Lyapunov operator is singular"))?;
    let p = Matrix6::from_iterator(sol.iter().copied());
    Ok((p + p.transpose()) * 0.5)
}

/// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn riccati_residual(params: &DynamicsParams, ctrl: &LqrController) -> f64 {
    let a = params.a_matrix();
    let b: Matrix6x3<f64> = params.b_matrix();
    let r_inv = ctrl.r.try_inverse().unwrap_or_else(Matrix3::zeros);
    let p = ctrl.p;
    (a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + ctrl.q).norm()
}

/// `clamp(−K·x, ±u_max)`.
pub fn lqr_control(ctrl: &LqrController, state: &RelativeState) -> ControlVector {
    ControlVector(-(ctrl.gain * state.to_vector())).clamped(ctrl.u_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector3, Vector6};

    #[test]
    fn default_design_is_stable() {
        let params = DynamicsParams::default();
        let ctrl = LqrController::with_defaults(&params).unwrap();
        let eig = ctrl.closed_loop(&params).complex_eigenvalues();
        assert!(eig.iter().all(|e| e.re < 0.0), "{eig}");
    }

    #[test]
    fn riccati_residual_is_small() {
        let params = DynamicsParams::default();
        let ctrl = LqrController::with_defaults(&params).unwrap();
        let res = riccati_residual(&params, &ctrl);
        assert!(res < 1e-8, "residual {res:e}");
        // P is symmetric positive definite
        assert!(ctrl.p.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn alternative_weights_also_converge() {
        let params = DynamicsParams::default();
        let q = Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, 10.0, 10.0, 10.0));
        let r = Matrix3::identity() * 0.5;
        let ctrl = lqr_design(&params, &q, &r).unwrap();
        assert!(riccati_residual(&params, &ctrl) < 1e-8);
    }

    #[test]
    fn rejects_bad_weights() {
        let params = DynamicsParams::default();
        let (q, _) = LqrController::default_weights();
        assert!(lqr_design(&params, &q, &Matrix3::zeros()).is_err());
        assert!(lqr_design(&params, &(-q), &Matrix3::identity()).is_err());
    }

    #[test]
    fn zero_state_zero_control() {
        let ctrl = LqrController::with_defaults(&DynamicsParams::default()).unwrap();
        let s = RelativeState::new(Vector3::zeros(), Vector3::zeros(), 1.0);
        assert_eq!(ctrl.control(&s), ControlVector::zero());
    }

    #[test]
    fn far_state_saturates_within_box() {
        let ctrl = LqrController::with_defaults(&DynamicsParams::default()).unwrap();
        let s = RelativeState::new(Vector3::new(100.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let raw = -(ctrl.gain * s.to_vector());
        let u = ctrl.control(&s);
        assert!(raw.x < -1.0, "raw {raw}");
        assert_eq!(u.0.x, -1.0);
        assert!(u.0.amax() <= 1.0);
    }

    #[test]
    fn linear_before_saturation() {
        let ctrl = LqrController::with_defaults(&DynamicsParams::default()).unwrap();
        let s1 = RelativeState::new(Vector3::new(0.5, -0.3, 0.2), Vector3::new(0.01, 0.0, -0.02), 0.0);
        let s2 = RelativeState::new(s1.position * 2.0, s1.velocity * 2.0, 0.0);
        let (u1, u2) = (ctrl.control(&s1), ctrl.control(&s2));
        assert!(u2.0.amax() < 1.0);
        assert!((u2.0 - u1.0 * 2.0).amax() < 1e-15);
    }
}
