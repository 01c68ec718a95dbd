//! End-to-end runs of the `coexist` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coexist"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "seed = 4\n\n[learning]\nepisodes = 12\nhorizon = 6\nmax_iters = 2\nmax_sweeps = 15\ntruncation_cap = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn usage_error_exits_one() {
    let o = run(&["--mode", "fly"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--mode", "learn"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "seed = 1\n[sim]\nnum_lte = 2\nrate_mbps = \"fast\"\n").unwrap();
    let o = run(&["--mode", "simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.toml: line 4"), "{err}");
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noseed.toml");
    fs::write(&path, "[learning]\nepisodes = 3\n").unwrap();
    let o = run(&["--mode", "simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn simulate_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sim");
    let o = run(&[
        "--mode", "simulate", "--config", cfg.to_str().unwrap(), "--episodes", "1", "--horizon", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("trajectories.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn learn_summarize_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let o = run(&["--mode", "learn", "--config", cfg_s, "--out", out_s, "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("final node counts"), "{report}");

    let o = run(&["--mode", "summarize", "--out", out_s]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("single-node FSCs"));

    let eval = |workers: &str| {
        let o = run(&["--mode", "evaluate", "--config", cfg_s, "--out", out_s, "--workers", workers]);
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    let first = eval("1");
    assert!(String::from_utf8_lossy(&first).contains("discounted value"));
    assert_eq!(first, eval("3"));
}

#[test]
fn seed_override_changes_output_and_workers_do_not() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let learn = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["--mode", "learn", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("elbo.csv")).unwrap()
    };
    let a = learn("a", &["--workers", "1"]);
    let b = learn("b", &["--workers", "4"]);
    let c = learn("c", &["--seed", "99"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn evaluate_without_policies_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("empty");
    let o = run(&["--mode", "evaluate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("agent_0.fsc"));
}

#[test]
fn summarize_empty_directory_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--mode", "summarize", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for f in ["elbo.csv", "nodes.csv", "value.csv", "gh.csv"] {
        assert!(err.contains(f), "{err}");
    }
}
