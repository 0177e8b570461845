use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tubeil::config::RunConfig;
use tubeil::io::sha256_hex;

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.artifact_dir = PathBuf::from("artifacts");
    cfg.mpc.horizon = 15;
    cfg.sim.steps = 12;
    cfg.sim.episodes = 2;
    cfg.sim.x0 = [0.5, 0.0, 0.0, 0.0];
    cfg.train.epochs = 200;
    cfg.train.batch_size = 12;
    cfg.dr.tube_rollouts = 2;
    cfg.dr.conventional_trajectories = 2;
    cfg.dr.sweep = vec![0, 1];
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn tubeil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubeil"))
        .args(args)
        .env_remove("TUBEIL_ARTIFACT_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn hash_file(p: &Path) -> String {
    sha256_hex(&std::fs::read(p).unwrap())
}

#[test]
fn demo_writes_one_row_per_step_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&tubeil(&["demo", "--config", cfg]));
    let csv = tmp.path().join("artifacts/demo.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    let first = hash_file(&csv);
    ok(&tubeil(&["demo", "--config", cfg]));
    assert_eq!(hash_file(&csv), first);
    let side = std::fs::read_to_string(tmp.path().join("artifacts/demo.json")).unwrap();
    let hash = RunConfig::load(Path::new(cfg)).unwrap().hash();
    assert!(side.contains(&hash));
}

#[test]
fn missing_config_names_the_path() {
    let out = tubeil(&["demo", "--config", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tubeil(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = tubeil(&["simulate", "--variant", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    let out = tubeil(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(tubeil(&["--help"]).status.success());
}

#[test]
fn numerical_failure_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = RunConfig::default();
    cfg.mpc.horizon = 10;
    cfg.sim.steps = 5;
    cfg.sim.x0 = [0.5, 0.0, 0.0, 0.0];
    cfg.train.epochs = 50;
    cfg.train.batch_size = 5;
    cfg.train.learning_rate = 1e300;
    cfg.train.final_learning_rate = None;
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = tubeil(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--variant",
        "proposed",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_round_trips_and_seed_changes_content() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&tubeil(&[
        "train",
        "--config",
        cfg,
        "--variant",
        "proposed",
    ]));
    let w = tmp.path().join("artifacts/weights/proposed.json");
    let loaded = tubeil::WeightsFile::load(&w).unwrap();
    let copy = tmp.path().join("copy.json");
    loaded.save(&copy).unwrap();
    assert_eq!(hash_file(&w), hash_file(&copy));

    let other = tmp.path().join("seeded");
    ok(&tubeil(&[
        "train",
        "--config",
        cfg,
        "--variant",
        "proposed",
        "--seed",
        "7",
        "--out",
        other.to_str().unwrap(),
    ]));
    assert_ne!(
        hash_file(&other.join("weights/proposed.json")),
        hash_file(&w)
    );
}

#[test]
fn env_var_moves_the_artifact_root() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let root = tmp.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_tubeil"))
        .args(["demo", "--config", cfg.to_str().unwrap()])
        .env("TUBEIL_ARTIFACT_DIR", &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("demo.csv").is_file());
    assert!(!tmp.path().join("artifacts/demo.csv").exists());
}

fn read_summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn simulate_governor_toggle_and_evaluate() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let runs = tmp.path().join("artifacts/runs");

    ok(&tubeil(&[
        "simulate",
        "--config",
        cfg,
        "--variant",
        "proposed",
        "--episodes",
        "1",
    ]));
    let dir = runs.join("proposed-model");
    let csvs: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 1);

    for (flag, variant) in [
        ("--no-governor", "proposed"),
        ("--governor", "proposed-governor"),
    ] {
        ok(&tubeil(&[
            "simulate",
            "--config",
            cfg,
            "--variant",
            "proposed",
            "--plant",
            "target",
            flag,
            "--jobs",
            "1",
        ]));
        let summary = read_summary(&runs.join(format!("{variant}-target")));
        assert_eq!(summary["summary"]["episodes"], 2);
    }
    // governed run refines the input; ungoverned run passes it through
    let differs = |dir: &str| {
        let text = std::fs::read_to_string(runs.join(dir).join("episode_000000.csv")).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let h = rdr.headers().unwrap().clone();
        let ci = h.iter().position(|c| c == "controller_input").unwrap();
        let ri = h.iter().position(|c| c == "refined_input").unwrap();
        rdr.records()
            .map(|r| r.unwrap())
            .filter(|r| !r[ci].is_empty())
            .any(|r| r[ci] != r[ri])
    };
    assert!(!differs("proposed-target"));
    assert!(differs("proposed-governor-target"));

    let eval = tmp.path().join("eval");
    ok(&tubeil(&[
        "evaluate",
        runs.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]));
    let table = std::fs::read_to_string(eval.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);
    assert!(eval.join("governor.json").is_file());
    let first = (
        hash_file(&eval.join("table.csv")),
        hash_file(&eval.join("governor.json")),
    );
    ok(&tubeil(&[
        "evaluate",
        runs.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]));
    assert_eq!(
        first,
        (
            hash_file(&eval.join("table.csv")),
            hash_file(&eval.join("governor.json"))
        )
    );
}

#[test]
fn evaluate_rejects_empty_directory() {
    let tmp = TempDir::new().unwrap();
    let out = tubeil(&["evaluate", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverging_ablation_is_reported_not_fatal() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = RunConfig::default();
    cfg.artifact_dir = PathBuf::from("artifacts");
    cfg.mpc.horizon = 15;
    cfg.sim.steps = 40;
    cfg.sim.episodes = 2;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 40;
    cfg.train.final_learning_rate = None;
    // a network driving the plant directly, against an absurd disturbance
    cfg.sim.disturbance_bound = 1e5;
    let path = tmp.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = tubeil(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--variant",
        "no-dr",
    ]);
    ok(&out);
    let summary = read_summary(&tmp.path().join("artifacts/runs/no-dr-model"));
    let diverged = summary["summary"]["diverged"].as_array().unwrap().len();
    let files = summary["episodes"].as_array().unwrap().len();
    assert_eq!(diverged + files, 2);
    assert!(diverged > 0, "{summary}");
}

#[test]
fn sweep_emits_rows_and_resumes_from_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    ok(&tubeil(&["sweep", "--config", cfg, "--episodes", "2"]));
    let sweep = tmp.path().join("artifacts/sweep.csv");
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    let first = hash_file(&sweep);

    // drop the last completed point; the rerun recomputes only that one
    let ckpt_path = tmp.path().join("artifacts/sweep.checkpoint.json");
    let mut ckpt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ckpt_path).unwrap()).unwrap();
    ckpt["rows"].as_array_mut().unwrap().pop();
    std::fs::write(&ckpt_path, serde_json::to_string(&ckpt).unwrap()).unwrap();
    let out = tubeil(&["sweep", "--config", cfg, "--episodes", "2"]);
    ok(&out);
    let log = String::from_utf8_lossy(&out.stderr);
    assert_eq!(log.matches("sweep point").count(), 1, "{log}");
    assert_eq!(hash_file(&sweep), first);
}
