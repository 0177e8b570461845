use nalgebra::{Matrix1, Matrix4, Vector1, Vector4};
use tubeil::dynamics::linearize;
use tubeil::lqr::*;
use tubeil::*;

#[test]
fn scalar_dare_matches_quadratic_root() {
    // p = a^2 p - a^2 p^2 / (r + p) + q with a=0.5, q=r=1
    // => p^2 - 0.25 p - 1 = 0 after clearing (1 + p)
    let oracle_p = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
    let oracle_k = -0.5 * oracle_p / (1.0 + oracle_p);
    let sol = solve_dare(
        &Matrix1::new(0.5),
        &Vector1::new(1.0),
        &Matrix1::new(1.0),
        1.0,
    )
    .unwrap();
    assert!((sol.p[0] - oracle_p).abs() < 1e-9);
    assert!((sol.k[0] - oracle_k).abs() < 1e-9);
    assert!(sol.residual < 1e-8);
}

#[test]
fn unstabilizable_pair_errors() {
    let res = solve_dare(
        &Matrix4::identity(),
        &Vector4::zeros(),
        &Matrix4::identity(),
        1.0,
    );
    assert!(matches!(res, Err(Error::DareNotConverged(_))));
}

#[test]
fn cartpole_gain_properties() {
    let dt = 0.02;
    let lin = linearize(&State::zeros(), 0.0, &ModelParams::NOMINAL, dt);
    let w = LqrWeights::default();
    let q = Matrix4::from_diagonal(&Vector4::from(w.q));
    let sol = solve_dare(&lin.a, &lin.b, &q, w.r).unwrap();
    assert!(sol.residual < 1e-8, "residual {}", sol.residual);
    assert!(sol.spectral_radius < 1.0);
    assert!((sol.p - sol.p.transpose()).amax() < 1e-10);
    let eig = sol.p.symmetric_eigenvalues();
    assert!(eig.min() > -1e-10);
    let k = sol.k;
    assert!(
        k[0] > 0.0 && k[1] > 0.0 && k[2] < 0.0 && k[3] < 0.0,
        "{k:?}"
    );
}

#[test]
fn ancillary_examples() {
    let g = AncillaryGain::from_row([1.0, 0.0, 0.0, 0.0]);
    let x = Vector4::new(2.0, 0.0, 0.0, 0.0);
    assert_eq!(ancillary_input(&g, &x, &Vector4::zeros()), 2.0);
    assert_eq!(ancillary_input(&g, &x, &x), 0.0);
    let paper = AncillaryGain::from_row([5.7, 10.3, -139.9, -41.7]);
    let v = ancillary_input(
        &paper,
        &Vector4::new(0.1, 0.0, 0.01, 0.0),
        &Vector4::zeros(),
    );
    assert!((v + 0.829).abs() < 1e-12);
}
