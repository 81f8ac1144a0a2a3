use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

use cw_rta::dynamics::{cw_derivative, ControlVector, DynamicsParams, RelativeState};
use cw_rta::safety::{cbf_rows, grad_h, h_values, is_safe, AlphaGains, SafetyParams, NUM_CONSTRAINTS};

fn direction() -> impl Strategy<Value = Vector3<f64>> {
    [-1.0..1.0f64, -1.0..1.0, -1.0..1.0]
        .prop_map(|[x, y, z]| Vector3::new(x, y, z))
        .prop_filter("non-degenerate", |v| v.norm() > 1e-2)
        .prop_map(|v| v.normalize())
}

fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-bound..bound, -bound..bound, -bound..bound].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

fn regular_state() -> impl Strategy<Value = RelativeState> {
    (direction(), 11.0..990.0f64, vec3(1.5)).prop_map(|(d, r, v)| RelativeState::new(d * r, v, 0.0))
}

fn h_dot(s: &RelativeState, i: usize, u: &Vector3<f64>) -> f64 {
    let params = DynamicsParams::default();
    let f = cw_derivative(s, &ControlVector(*u), &params).unwrap().to_vector();
    grad_h(s, &SafetyParams::default(), i).grad.dot(&f)
}

/// State placed on the zero level set of barrier `i`.
fn on_boundary(i: usize, d: Vector3<f64>, r: f64, t: Vector3<f64>) -> RelativeState {
    let sp = SafetyParams::default();
    let tangent = (t - d * d.dot(&t)) * 0.1;
    match i {
        0 => {
            let s = (2.0 * sp.a_max * (r - sp.collision_radius())).sqrt();
            RelativeState::new(d * r, tangent - d * s, 0.0)
        }
        1 => {
            let s = (2.0 * sp.a_max * (sp.r_max - r)).sqrt();
            RelativeState::new(d * r, tangent + d * s, 0.0)
        }
        2 => {
            let speed = sp.nu0 + sp.nu1 * r;
            let dir = (d + tangent).normalize();
            RelativeState::new(d * r, dir * speed, 0.0)
        }
        _ => {
            let mut v = t * 0.3;
            v[i - 3] = if t.x >= 0.0 { sp.v_max } else { -sp.v_max };
            RelativeState::new(d * r, v, 0.0)
        }
    }
}

proptest! {
    #[test]
    fn gradients_match_finite_differences(s in regular_state()) {
        let sp = SafetyParams::default();
        let x = s.to_vector();
        for i in 0..NUM_CONSTRAINTS {
            let g = grad_h(&s, &sp, i).grad;
            let mut fd = Vector6::zeros();
            for j in 0..6 {
                let eps = 1e-6 * x[j].abs().max(1.0);
                let (mut xp, mut xm) = (x, x);
                xp[j] += eps;
                xm[j] -= eps;
                fd[j] = (h_values(&RelativeState::from_vector(&xp, 0.0, 0.0), &sp)[i]
                    - h_values(&RelativeState::from_vector(&xm, 0.0, 0.0), &sp)[i])
                    / (2.0 * eps);
            }
            prop_assert!((g - fd).amax() / g.amax().max(1.0) < 1e-5, "h{}: {g:?} vs {fd:?}", i + 1);
        }
    }

    #[test]
    fn range_barriers_move_with_range_rate(s in regular_state(), dv in 1e-3..0.5f64) {
        let sp = SafetyParams::default();
        let d = s.position.normalize();
        let faster = RelativeState::new(s.position, s.velocity + d * dv, 0.0);
        let (h, hf) = (h_values(&s, &sp), h_values(&faster, &sp));
        // h1 grows and h2 shrinks as the deputy moves outward faster
        prop_assert!(hf[0] > h[0]);
        prop_assert!(hf[1] < h[1]);
    }

    #[test]
    fn equality_on_row_holds_boundary(
        i in 0..NUM_CONSTRAINTS,
        d in direction(),
        r in 12.0..900.0f64,
        t in vec3(1.0),
        free in vec3(1.0),
    ) {
        let sp = SafetyParams::default();
        let s = on_boundary(i, d, r, t);
        prop_assume!(h_values(&s, &sp)[i].abs() < 1e-12);
        let rows = cbf_rows(&s, &sp, &DynamicsParams::default(), &AlphaGains::default());
        let row = rows.rows[i];
        prop_assume!(row.c.norm() > 1e-9);
        // any thrust with c·u + b = 0
        let c_hat = row.c / row.c.norm();
        let u = free - c_hat * c_hat.dot(&free) - c_hat * (row.b / row.c.norm());
        prop_assert!(row.slack(&u).abs() < 1e-9);
        prop_assert!(h_dot(&s, i, &u).abs() < 1e-9, "{}", h_dot(&s, i, &u));
    }

    #[test]
    fn gain_scaling_only_shifts_offsets(s in regular_state(), factor in 0.01..100.0f64) {
        let sp = SafetyParams::default();
        let dp = DynamicsParams::default();
        let a = AlphaGains::default();
        let base = cbf_rows(&s, &sp, &dp, &a);
        let scaled = cbf_rows(&s, &sp, &dp, &a.scaled(factor));
        prop_assert_eq!(base.h, scaled.h);
        prop_assert_eq!(is_safe(&s, &sp), base.h.iter().all(|&h| h >= 0.0));
        for i in 0..NUM_CONSTRAINTS {
            prop_assert_eq!(base.rows[i].c, scaled.rows[i].c);
            let shift = scaled.rows[i].b - base.rows[i].b;
            let want = (factor - 1.0) * a.0[i] * base.h[i];
            prop_assert!((shift - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }
}
