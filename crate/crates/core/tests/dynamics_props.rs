use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

use cw_rta::dynamics::{
    analytic_propagate, lab_to_space, propagate_zoh, space_to_lab, step, sun_vector, ControlVector, DynamicsParams,
    RelativeState,
};

fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-bound..bound, -bound..bound, -bound..bound].prop_map(|[x, y, z]| Vector3::new(x, y, z))
}

fn state() -> impl Strategy<Value = RelativeState> {
    (vec3(1000.0), vec3(1.0), 0.0..std::f64::consts::TAU).prop_map(|(p, v, th)| RelativeState::new(p, v, th))
}

proptest! {
    #[test]
    fn step_is_linear(a in state(), b in state(), ua in vec3(1.0), ub in vec3(1.0), dt in 0.01..2.0f64) {
        let params = DynamicsParams::default();
        let sum = RelativeState::from_vector(&(a.to_vector() + b.to_vector()), 0.0, 0.0);
        let lhs = step(&sum, &ControlVector(ua + ub), dt, &params).unwrap().to_vector();
        let zero = RelativeState::from_vector(&Vector6::zeros(), 0.0, 0.0);
        let rhs = step(&a, &ControlVector(ua), dt, &params).unwrap().to_vector()
            + step(&b, &ControlVector(ub), dt, &params).unwrap().to_vector()
            - step(&zero, &ControlVector::zero(), dt, &params).unwrap().to_vector();
        prop_assert!((lhs - rhs).amax() < 1e-9, "{}", (lhs - rhs).amax());
    }

    #[test]
    fn sun_vector_is_unit(theta in -100.0..100.0f64) {
        prop_assert!((sun_vector(theta).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lab_round_trip(s in state(), pos_scale in 1.0..500.0f64, time_scale in 1.0..50.0f64) {
        let lab = space_to_lab(&s, pos_scale, time_scale).unwrap();
        let back = lab_to_space(&lab, s.sun_angle, pos_scale, time_scale).unwrap();
        let err = (back.to_vector() - s.to_vector()).amax() / s.to_vector().amax().max(1.0);
        prop_assert!(err < 1e-12, "{err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rk4_tracks_closed_form(s in state(), dt in 0.2..1.0f64) {
        let params = DynamicsParams::default();
        let numeric = propagate_zoh(&s, &ControlVector::zero(), 6000.0, dt, &params).unwrap();
        let exact = analytic_propagate(&s, 6000.0, &params).unwrap();
        prop_assert!((numeric.position - exact.position).norm() < 1e-6);
        prop_assert!((numeric.velocity - exact.velocity).norm() < 1e-8);
        prop_assert!((numeric.sun_angle - exact.sun_angle).abs() < 1e-9);
    }
}
