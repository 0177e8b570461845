use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubeil::dynamics::state;
use tubeil::mlp::*;
use tubeil::Error;

#[test]
fn zero_network_outputs_mean() {
    let mut w = MlpWeights::zeros(&CARTPOLE_LAYERS);
    w.normalization.output_mean = 3.5;
    w.normalization.output_scale = 2.0;
    assert_eq!(forward(&w, &state(1.0, 2.0, 3.0, 4.0)).unwrap(), 3.5);
}

#[test]
fn hand_computed_single_hidden_layer() {
    let mut w = MlpWeights::zeros(&[2, 2, 1]);
    w.layers[0].weights = vec![0.5, -1.0, 2.0, 0.25];
    w.layers[0].biases = vec![0.1, -0.2];
    w.layers[1].weights = vec![1.5, -0.75];
    w.layers[1].biases = vec![0.3];
    let x = [0.4, -0.6];
    let h0 = (0.5f64 * 0.4 - 1.0 * -0.6 + 0.1).tanh();
    let h1 = (2.0f64 * 0.4 + 0.25 * -0.6 - 0.2).tanh();
    let expected = 1.5 * h0 - 0.75 * h1 + 0.3;
    assert!((w.predict(&x).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn shape_mismatch_errors() {
    let w = MlpWeights::zeros(&[2, 3, 1]);
    assert!(w.predict(&[1.0, 2.0, 3.0]).is_err());
    let mut bad = w.clone();
    bad.layers[0].weights.pop();
    assert!(bad.validate().is_err());
    assert!(w.validate().is_ok());
}

#[test]
fn backprop_matches_finite_differences() {
    let w = MlpWeights::init(&[2, 2, 1], 0);
    let err = gradient_check(&w, &[0.3, -0.7], 0.4, 1e-6);
    assert!(err < 1e-5, "{err}");
    let deep = MlpWeights::init(&[4, 5, 5, 1], 3);
    let err = gradient_check(&deep, &[0.3, -0.7, 1.1, 0.2], -0.9, 1e-6);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gradient_vanishes_at_exact_fit() {
    let w = MlpWeights::init(&[2, 2, 1], 1);
    let z = [0.2, 0.5];
    let y = w.forward_normalized(&z);
    let (loss, grad) = w.loss_and_gradient(&z, y);
    assert_eq!(loss, 0.0);
    assert!(grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-8);
}

#[test]
fn finite_difference_error_shrinks_with_h() {
    let w = MlpWeights::init(&[2, 2, 1], 0);
    let coarse = gradient_check(&w, &[0.3, -0.7], 0.4, 1e-3);
    let fine = gradient_check(&w, &[0.3, -0.7], 0.4, 1e-5);
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn memorizes_singleton() {
    let cfg = TrainConfig {
        epochs: 2000,
        ..Default::default()
    };
    let out = train(&[vec![3.0, 0.0, 0.0, 0.0]], &[12.5], &cfg).unwrap();
    let pred = out.weights.predict(&[3.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(out.weights.normalization.normalize_output(pred).abs() < 1e-4 + 0.0);
    assert!((pred - 12.5).abs() < 1e-4);
}

#[test]
fn learns_linear_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<f64> = inputs.iter().map(|x| 2.0 * x[0]).collect();
    let cfg = TrainConfig {
        epochs: 3000,
        batch_size: 32,
        final_learning_rate: None,
        ..Default::default()
    };
    let out = train(&inputs, &targets, &cfg).unwrap();
    assert!(out.final_loss() < 1e-4, "{}", out.final_loss());
}

#[test]
fn training_is_reproducible() {
    let inputs = vec![
        vec![0.0, 1.0, 2.0, 3.0],
        vec![1.0, 0.5, -1.0, 0.0],
        vec![-2.0, 0.0, 0.3, 1.0],
    ];
    let targets = vec![1.0, -2.0, 0.5];
    let cfg = TrainConfig {
        epochs: 50,
        ..Default::default()
    };
    let a = train(&inputs, &targets, &cfg).unwrap();
    let b = train(&inputs, &targets, &cfg).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.loss_history, b.loss_history);
}

#[test]
fn rejects_bad_datasets() {
    let cfg = TrainConfig::default();
    assert!(matches!(train(&[], &[], &cfg), Err(Error::EmptyDataset)));
    assert!(train(&[vec![0.0; 4]], &[f64::NAN], &cfg).is_err());
}

#[test]
fn divergence_reports_epoch() {
    let cfg = TrainConfig {
        learning_rate: 1e300,
        epochs: 5,
        ..Default::default()
    };
    let inputs = vec![vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.5, -1.0, 0.0]];
    match train(&inputs, &[1.0, -1.0], &cfg) {
        Err(Error::TrainingDiverged(_)) => {}
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|o| o.final_loss())
        ),
    }
}

#[test]
fn weights_file_round_trips_bit_exactly() {
    let mut w = MlpWeights::init(&CARTPOLE_LAYERS, 5);
    w.normalization = Normalization::fit(
        &[vec![0.1, 0.2, 0.3, 0.4], vec![1.0 / 3.0, -2.0, 0.0, 7.0]],
        &[1.0, 2.0 / 3.0],
    );
    let file = WeightsFile {
        weights: w,
        train_config: TrainConfig::default(),
        dataset_fingerprint: dataset_fingerprint(&[vec![1.0; 4]], &[2.0]),
        final_loss: 1.0e-7 / 3.0,
        provenance: "nominal".into(),
        config_hash: "abc".into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.json");
    file.save(&p).unwrap();
    let back = WeightsFile::load(&p).unwrap();
    assert_eq!(back, file);
    let p2 = dir.path().join("w2.json");
    back.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
}

proptest! {
    #[test]
    fn normalization_round_trip(
        a in -100.0..100.0f64, b in -100.0..100.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64,
    ) {
        let norm = Normalization {
            input_mean: vec![1.0, -2.0, 0.5, 0.0],
            input_scale: vec![3.0, 0.1, 7.0, 1.0],
            output_mean: 4.0,
            output_scale: 9.0,
        };
        let x = vec![a, b, c, d];
        let back = norm.denormalize_input(&norm.normalize_input(&x));
        for (u, v) in back.iter().zip(&x) {
            prop_assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
        prop_assert!((norm.denormalize_output(norm.normalize_output(a)) - a).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
