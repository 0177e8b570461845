use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubeil::dynamics::state;
use tubeil::dynamics::{normal_force, normal_force_affine};
use tubeil::governor::*;
use tubeil::*;

const PLANT: ModelParams = ModelParams {
    cart_mass: 6.0,
    pole_mass: 0.5,
    ..ModelParams::NOMINAL
};

#[test]
fn identity_when_nothing_changed() {
    let x = state(0.4, -0.2, 0.3, 0.7);
    let r = refine(7.5, &x, &x, &ModelParams::NOMINAL, &ModelParams::NOMINAL).unwrap();
    assert!((r.refined - 7.5).abs() < 1e-12);
    assert_eq!(r.method, GovernorMethod::AffineClosedForm);
}

#[test]
fn zero_maps_to_zero() {
    let x = state(0.0, 0.0, 0.2, 0.1);
    let r = refine(0.0, &x, &State::zeros(), &PLANT, &ModelParams::NOMINAL).unwrap();
    assert_eq!(r.refined, 0.0);
}

#[test]
fn heavier_cart_scales_force_up() {
    // F_z = 49.05 N nominal, 63.765 N on the plant; 10 * 63.765 / 49.05 = 13
    let r = refine(
        10.0,
        &State::zeros(),
        &State::zeros(),
        &PLANT,
        &ModelParams::NOMINAL,
    )
    .unwrap();
    assert!((r.refined - 13.0).abs() < 1e-12, "{}", r.refined);
    assert!(r.residual < 1e-12);
}

#[test]
fn identity_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let x = state(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-2.0..2.0),
        );
        let u = rng.gen_range(-40.0..40.0);
        let r = refine(u, &x, &x, &ModelParams::NOMINAL, &ModelParams::NOMINAL).unwrap();
        assert!((r.refined - u).abs() < 1e-12, "{u} -> {}", r.refined);
    }
}

#[test]
fn vanishing_pivot_falls_back_or_reports_singular() {
    // Construct a pivot of exactly zero: pick u so that u * b = c.
    let x = state(0.0, 0.0, 0.4, 0.0);
    let (_, b) = normal_force_affine(&x, &PLANT);
    let c_of = |u: f64| normal_force(&State::zeros(), u, &ModelParams::NOMINAL);
    // c is constant at the upright nominal state.
    let u = c_of(0.0) / b;
    match refine(u, &x, &State::zeros(), &PLANT, &ModelParams::NOMINAL) {
        Ok(r) => assert_eq!(r.method, GovernorMethod::FixedPoint),
        Err(Error::GovernorSingular { .. }) => {}
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn gap_series_vanishes_for_identical_runs() {
    let xs = vec![state(1.0, 0.0, 0.1, 0.0), state(0.9, -0.1, 0.05, -0.2)];
    let us = vec![3.0, -2.0];
    let gap = constraint_gap_series(
        &xs,
        &xs,
        &us,
        &us,
        &ModelParams::NOMINAL,
        &ModelParams::NOMINAL,
    )
    .unwrap();
    assert!(gap.iter().all(|g| g.abs() < 1e-10));
    assert!(constraint_gap_series(&xs, &xs, &us, &us[..1], &PLANT, &ModelParams::NOMINAL).is_err());
}

#[test]
fn constraint_function_above_minus_one() {
    let x = state(0.0, 0.0, 0.2, 0.5);
    assert!(friction_constraint(&x, 5.0, &PLANT) > -1.0);
    assert_eq!(friction_constraint(&x, 0.0, &PLANT), -1.0);
}

proptest! {
    #[test]
    fn refined_input_matches_nominal_usage(
        th in -0.6..0.6f64, w in -2.0..2.0f64, dth in -0.1..0.1f64, dw in -0.5..0.5f64,
        u in -30.0..30.0f64,
    ) {
        let nominal = state(0.0, 0.0, th, w);
        let actual = state(0.05, 0.1, th + dth, w + dw);
        let r = refine(u, &actual, &nominal, &PLANT, &ModelParams::NOMINAL).unwrap();
        prop_assert!(r.residual < RESIDUAL_TOL);
        let c = normal_force(&nominal, u, &ModelParams::NOMINAL);
        prop_assert!(fixed_point_residual(u, r.refined, &actual, c, &PLANT) < RESIDUAL_TOL);
    }
}
