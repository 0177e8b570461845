use tubeil::dynamics::state;
use tubeil::mpc::*;
use tubeil::State;

fn cfg() -> MpcConfig {
    MpcConfig::default()
}

#[test]
fn origin_is_optimal() {
    let sol = solve(&State::zeros(), &cfg(), None).unwrap();
    assert!(sol.converged);
    assert!(sol.inputs.iter().all(|u| u.abs() < 1e-6));
    assert!(sol.cost < 1e-10);
    let (u, _) = receding_control(&State::zeros(), &cfg(), None).unwrap();
    assert!(u.abs() < 1e-6);
}

#[test]
fn tightened_constraint_holds_from_initial_state() {
    let c = cfg();
    let x0 = state(3.0, 0.0, 0.0, 0.0);
    let sol = solve(&x0, &c, None).unwrap();
    assert!(sol.converged);
    assert!(sol.max_violation <= 1e-6);
    assert!(sol.stationarity < 1e-5);
    assert_eq!(sol.states[0], x0);
    for (x, u) in sol.states.iter().zip(&sol.inputs) {
        assert!(friction_ratio(x, *u, &c.params).abs() <= 0.8 + 1e-6);
    }
    // the bound is active somewhere: the unconstrained optimum would exceed it
    let peak = sol
        .states
        .iter()
        .zip(&sol.inputs)
        .map(|(x, u)| friction_ratio(x, *u, &c.params).abs())
        .fold(0.0, f64::max);
    assert!(peak > 0.79);
}

#[test]
fn rollout_consistency() {
    let c = cfg();
    let x0 = state(1.0, 0.5, 0.1, -0.2);
    let sol = solve(&x0, &c, None).unwrap();
    let mut x = x0;
    for (k, u) in sol.inputs.iter().enumerate() {
        assert!((x - sol.states[k]).amax() <= 1e-10);
        x = tubeil::dynamics::step_rk4(&x, *u, &c.params, c.dt).unwrap();
    }
    assert!((x - sol.states[c.horizon]).amax() <= 1e-10);
}

#[test]
fn one_step_matches_grid_search() {
    let c = MpcConfig {
        horizon: 1,
        q: [1.0, 0.0, 0.0, 0.0],
        r: 1.0,
        ..cfg()
    };
    let x0 = state(0.01, 0.0, 0.0, 0.0);
    let sol = solve(&x0, &c, None).unwrap();
    // oracle: exhaustive search of J(u) = x0'Qx0 + R u^2 on [-10, 10]
    let steps = 2_000_000;
    let (mut best_u, mut best_j) = (0.0, f64::INFINITY);
    for i in 0..=steps {
        let u = -10.0 + 20.0 * i as f64 / steps as f64;
        let j = x0[0] * x0[0] + u * u;
        if j < best_j {
            best_j = j;
            best_u = u;
        }
    }
    assert!((sol.inputs[0] - best_u).abs() < 1e-4);
    assert!((sol.cost - best_j).abs() < 1e-8);
}

#[test]
fn cost_non_decreasing_in_gamma() {
    let x0 = state(3.0, 0.0, 0.0, 0.0);
    let costs: Vec<f64> = [0.0, 0.2, 0.5]
        .iter()
        .map(|&gamma| {
            let sol = solve(&x0, &MpcConfig { gamma, ..cfg() }, None).unwrap();
            assert!(sol.converged, "gamma {gamma}");
            sol.cost
        })
        .collect();
    assert!(
        costs[0] <= costs[1] + 1e-6 && costs[1] <= costs[2] + 1e-6,
        "{costs:?}"
    );
}

#[test]
fn warm_start_saves_iterations() {
    let c = cfg();
    let mut solver = MpcSolver::new(c).unwrap();
    let x0 = state(3.0, 0.0, 0.0, 0.0);
    let first = solver.solve(&x0, None).unwrap();
    let x1 = tubeil::dynamics::step_rk4(&x0, first.inputs[0], &c.params, c.dt).unwrap();
    let cold = solver.solve(&x1, None).unwrap();
    let warm = solver.solve(&x1, Some(&first)).unwrap();
    assert!(warm.converged && cold.converged);
    assert!(
        warm.iterations < cold.iterations,
        "{} vs {}",
        warm.iterations,
        cold.iterations
    );
    assert!((warm.inputs[0] - cold.inputs[0]).abs() < 1e-3);
}

#[test]
fn invalid_config_rejected() {
    assert!(MpcSolver::new(MpcConfig {
        gamma: 1.0,
        ..cfg()
    })
    .is_err());
    assert!(MpcSolver::new(MpcConfig {
        horizon: 0,
        ..cfg()
    })
    .is_err());
    assert!(MpcSolver::new(MpcConfig { r: 0.0, ..cfg() }).is_err());
    assert!(solve(&state(f64::NAN, 0.0, 0.0, 0.0), &cfg(), None).is_err());
}

#[test]
fn shifted_warm_start_repeats_tail() {
    let sol = MpcSolution {
        inputs: vec![1.0, 2.0, 3.0],
        states: vec![],
        cost: 0.0,
        max_violation: 0.0,
        stationarity: 0.0,
        iterations: 0,
        outer_iterations: 0,
        converged: true,
        outer_costs: vec![],
    };
    assert_eq!(sol.shifted_inputs(), vec![2.0, 3.0, 3.0]);
}
