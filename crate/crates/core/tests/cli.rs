use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relaynet::harness::{run_eval, run_train, ExperimentManifest, RunOptions};
use relaynet::learner::{checkpoint_path, latest_checkpoint, optimizer_path};

fn smoke_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../manifests/smoke.toml")
}

fn relaynet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaynet")).args(args).env("RELAYNET_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = relaynet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn header(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines().find(|l| !l.starts_with('#')).unwrap().to_owned()
}

#[test]
fn every_subcommand_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let manifest = smoke_path();
    let m = manifest.to_str().unwrap();
    let common = ["--manifest", m, "--out", out, "--deterministic"];
    let with = |cmd: &'static str| [&[cmd][..], &common[..]].concat();

    assert!(ok(&with("train")).contains("seed 0"));
    assert!(dir.path().join("seed_0/metrics.csv").exists());
    assert!(ok(&with("eval")).contains("coverage"));
    assert_eq!(
        header(&dir.path().join("eval.csv")),
        "seed,episode_seed,coverage_ratio,overlap_rate,episode_reward,episode_length,comm_components,won"
    );
    assert!(ok(&with("baseline")).contains("snapshots"));
    assert!(dir.path().join("baseline.csv").exists());
    ok(&with("sweep"));
    assert_eq!(header(&dir.path().join("zero_shot.csv")), "num_drones,num_nodes,comm,obs,coverage_ratio");
    ok(&with("ablate"));
    let ablation = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    for method in ["full", "no_comm", "mean_pool"] {
        assert!(ablation.contains(method), "{ablation}");
    }

    let hash = ExperimentManifest::load(&manifest).unwrap().hash();
    let metrics = fs::read_to_string(dir.path().join("seed_0/metrics.csv")).unwrap();
    assert!(metrics.starts_with(&format!("# manifest_sha256={hash}")));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[world]\nnum_uavs = 0\n").unwrap();
    let out = relaynet(&["train", "--manifest", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_uavs"));

    let out = relaynet(&["eval", "--manifest", "/nonexistent/manifest.toml"]);
    assert!(!out.status.success());

    let out = relaynet(&["eval", "--manifest", smoke_path().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success(), "eval without a checkpoint must fail");
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentManifest::load(&smoke_path()).unwrap();
    let opts = RunOptions { deterministic: true, ..RunOptions::default() };
    m.output_dir = dir.path().join("whole");
    run_train(&m, &opts).unwrap();
    let whole = fs::read(m.seed_dir(0).join("metrics.csv")).unwrap();
    let whole_ckpt =
        fs::read(checkpoint_path(&m.seed_dir(0), latest_checkpoint(&m.seed_dir(0)).unwrap().unwrap())).unwrap();

    m.output_dir = dir.path().join("cut");
    run_train(&m, &opts).unwrap();
    let run = m.seed_dir(0);
    let last = latest_checkpoint(&run).unwrap().unwrap();
    fs::remove_file(checkpoint_path(&run, last)).unwrap();
    fs::remove_file(optimizer_path(&run, last)).unwrap();
    let before = latest_checkpoint(&run).unwrap().unwrap();
    assert!(before < last);

    let out = run_train(&m, &opts).unwrap();
    assert!(out[0].resumed);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), whole);
    assert_eq!(fs::read(checkpoint_path(&run, last)).unwrap(), whole_ckpt);
}

#[test]
fn zero_episode_eval_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ExperimentManifest::load(&smoke_path()).unwrap();
    m.output_dir = dir.path().to_path_buf();
    m.train.total_env_steps = 0;
    m.eval_episodes = 0;
    run_train(&m, &RunOptions::default()).unwrap();
    let report = run_eval(&m, &RunOptions::default()).unwrap();
    assert!(report.aggregate.is_none());
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(eval.lines().filter(|l| !l.starts_with('#')).count(), 1);
}
