use tubeil::demo::*;
use tubeil::dynamics::rk4;
use tubeil::*;

fn cfg() -> MpcConfig {
    MpcConfig::default()
}

#[test]
fn demo_regulates_to_origin() {
    let traj = collect_nominal_demo(&state(3.0, 0.0, 0.0, 0.0), 100, &cfg()).unwrap();
    assert_eq!(traj.len(), 100);
    let f = traj.final_state();
    assert!(f[0].abs() < 0.1 && f[2].abs() < 0.05, "{f:?}");
    assert!(traj.consistency_error(&ModelParams::NOMINAL, cfg().dt) < 1e-10);
    let again = collect_nominal_demo(&state(3.0, 0.0, 0.0, 0.0), 100, &cfg()).unwrap();
    assert_eq!(traj, again);
}

#[test]
fn demo_from_origin_stays_put() {
    let traj = collect_nominal_demo(&State::zeros(), 10, &cfg()).unwrap();
    assert!(traj.states.iter().all(|s| s.amax() < 1e-9));
    assert!(traj.inputs.iter().all(|u| u.abs() < 1e-6));
}

#[test]
fn non_convergence_aborts_with_step() {
    let mut c = cfg();
    c.solver.max_outer = 1;
    c.solver.max_inner = 1;
    match collect_nominal_demo(&state(3.0, 0.0, 0.0, 0.0), 5, &c) {
        Err(Error::DemoAborted { step, partial, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(partial.len(), 0);
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

fn short_demo() -> Trajectory {
    let mut states = vec![state(1.0, 0.0, 0.1, 0.0)];
    let inputs = vec![2.0, -1.0, 0.5];
    for u in &inputs {
        let next = rk4(states.last().unwrap(), *u, &ModelParams::NOMINAL, 0.05);
        states.push(next);
    }
    Trajectory {
        states,
        inputs,
        converged: vec![true; 3],
        iterations: vec![1; 3],
        domain: Domain::Nominal,
        seed: 0,
    }
}

const GAIN: AncillaryGain = AncillaryGain {
    k: [2.0, 1.0, -30.0, -5.0],
    spectral_radius: 0.9,
    residual: 0.0,
};

#[test]
fn zero_tube_reproduces_nominal_labels() {
    let demo = short_demo();
    let tube = Tube {
        half_widths: [0.0; 4],
    };
    for mode in [DrMode::Conventional, DrMode::Tube] {
        let ds = make_dr_dataset(&demo, 2, mode, &tube, &GAIN, 1).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.labels[i], demo.inputs[ds.steps[i]]);
        }
    }
}

#[test]
fn tube_mode_uses_only_sparse_sites() {
    let demo = short_demo();
    let tube = Tube {
        half_widths: [0.1, 0.2, 0.05, 0.3],
    };
    let ds = make_dr_dataset(&demo, 20, DrMode::Tube, &tube, &GAIN, 3).unwrap();
    let sites = tube.sparse_sites();
    assert_eq!(sites.len(), 24);
    for e in &ds.offsets {
        assert!(sites.iter().any(|s| s == e), "{e:?}");
    }
    // all sites get visited in 60 round-robin draws
    for s in &sites {
        assert!(ds.offsets.iter().any(|e| e == s));
    }
}

#[test]
fn conventional_mode_stays_inside_box_and_is_linear_in_offset() {
    let demo = short_demo();
    let tube = Tube {
        half_widths: [0.1, 0.2, 0.05, 0.3],
    };
    let ds = make_dr_dataset(&demo, 10, DrMode::Conventional, &tube, &GAIN, 3).unwrap();
    assert_eq!(ds.len(), 30);
    for i in 0..ds.len() {
        assert!(tube.contains(&ds.offsets[i]));
        let k = ds.steps[i];
        let ke: f64 = GAIN
            .k
            .iter()
            .zip(ds.offsets[i].iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!((ds.labels[i] - demo.inputs[k] - ke).abs() < 1e-12);
    }
    let again = make_dr_dataset(&demo, 10, DrMode::Conventional, &tube, &GAIN, 3).unwrap();
    assert_eq!(ds, again);
}

#[test]
fn trajectory_csv_round_trip() {
    let demo = short_demo();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("demo.csv");
    demo.save(&p, "hash").unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("k,x_pos,x_vel,theta,theta_dot,u,converged\n"));
    let (back, side) = Trajectory::load(&p).unwrap();
    assert_eq!(back.states, demo.states);
    assert_eq!(back.inputs, demo.inputs);
    assert_eq!(side.config_hash, "hash");
}
