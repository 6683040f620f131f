use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use btai::model::ModelParams;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn btai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btai")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_owned()
}

#[test]
fn corridor_reaches_goal_in_one_step() {
    let out = btai(&["episode", "--config", &config("corridor.toml")]);
    let csv = stdout(&out);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,observation,action,selected_gbar,planning_iterations,wall_time_ms");
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split(',').collect();
    // start in cell 0, move right
    assert_eq!(&fields[..3], &["0", "0", "3"]);
    assert_eq!(fields[4], "4");
    let summary = String::from_utf8_lossy(&out.stderr);
    assert!(summary.contains("steps_to_goal=1"), "{summary}");
}

#[test]
fn zero_horizon_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = btai(&[
        "episode",
        "--config",
        &config("corridor.toml"),
        "--set",
        "run.horizon=0",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "step,observation,action,selected_gbar,planning_iterations,wall_time_ms\n");
}

#[test]
fn episode_replays_byte_for_byte() {
    let args = [
        "episode",
        "--config",
        &config("maze.toml"),
        "--seed",
        "11",
        "--planner.expansions",
        "16",
        "--set",
        "output.wall_time=false",
    ];
    let first = stdout(&btai(&args));
    let second = stdout(&btai(&args));
    assert_eq!(first, second);
    assert!(first.lines().count() > 1);
    for line in first.lines().skip(1) {
        assert!(line.ends_with(",0.0000000000000000e0"), "{line}");
    }
}

#[test]
fn benchmark_counts_policies_and_expansions() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let model = ModelParams::random_known(btai::model::ModelSpec::new(3, 3, 2).unwrap(), &mut rng).unwrap();
    let model_path = dir.path().join("two_actions.model");
    std::fs::write(&model_path, model.to_text()).unwrap();
    let out = btai(&[
        "benchmark",
        "--planner.expansions",
        "7",
        "--set",
        &format!("benchmark.model=\"{}\"", model_path.display()),
        "--set",
        "benchmark.horizons=[1, 2]",
        "--set",
        "output.wall_time=false",
    ]);
    let csv = stdout(&out);
    assert_eq!(
        csv,
        "planner,horizon,policies_or_expansions,wall_time_ms,censored\n\
         baseline,1,2,0.0000000000000000e0,false\n\
         baseline,2,4,0.0000000000000000e0,false\n\
         btai,1,7,0.0000000000000000e0,false\n\
         btai,2,7,0.0000000000000000e0,false\n"
    );
}

#[test]
fn oracle_passes_and_reports_every_check() {
    let out = btai(&["oracle", "--set", "oracle.models=3", "--set", "oracle.trees=5", "--set", "oracle.nodes=10"]);
    let csv = stdout(&out);
    assert!(csv.starts_with("check,cases,max_error,tolerance,passed\n"));
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
}

#[test]
fn bad_configs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[planner]\nexpansion = 3\n").unwrap();
    let out = btai(&["episode", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("planner.expansion"));

    let out = btai(&["episode"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("env.maze"));

    let out = btai(&["episode", "--config", "/nonexistent/config.toml"]);
    assert!(!out.status.success());

    let out = btai(&["episode", "--config", &config("corridor.toml"), "--planner.expansions", "0"]);
    assert!(!out.status.success());
}

#[test]
fn vfe_trace_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vfe.csv");
    let out = btai(&[
        "episode",
        "--config",
        &config("corridor.toml"),
        "--inference.mode",
        "global",
        "--set",
        &format!("output.vfe_trace=\"{}\"", path.display()),
    ]);
    stdout(&out);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,sweep_index,vfe"));
    assert!(lines.next().unwrap().starts_with("0,0,"));
}
