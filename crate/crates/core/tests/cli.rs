use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use knaf::harness::PolicyFile;

fn knaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knaf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = knaf(args);
    assert!(
        out.status.success(),
        "knaf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.trim()).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = path(dir, "cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn zero_step_training_writes_an_empty_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "max_steps = 0\n");
    let out = path(dir.path(), "zero.policy");
    let summary = ok_json(&["train", "--map", "Round", "--config", &cfg, "--out", &out]);
    assert_eq!(summary["model_order"], 0);
    let file = PolicyFile::load(&out).unwrap();
    assert_eq!(file.policy.order(), 0);
    assert_eq!(file.policy.state_dim(), 5);
    assert_eq!(file.policy.action_dim(), 1);
    assert_eq!(file.provenance.map, "Round");
    let e = file.policy.evaluate(&[1.0; 5]).unwrap();
    assert_eq!((e.value, e.mean[0]), (0.0, 0.0));
}

fn trained(dir: &Path) -> String {
    let cfg = write_config(dir, "max_steps = 20000\nl0 = 0.03\nseed = 1\n");
    let out = path(dir, "round.policy");
    let metrics = path(dir, "metrics.csv");
    ok_json(&[
        "train",
        "--map",
        "Round",
        "--config",
        &cfg,
        "--out",
        &out,
        "--metrics",
        &metrics,
    ]);
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,episode,reward,delta,model_order"));
    assert_eq!(lines.count(), 20000);
    out
}

#[test]
fn single_policy_composition_evaluates_like_the_original() {
    let dir = tempfile::tempdir().unwrap();
    let original = trained(dir.path());
    let composite = path(dir.path(), "composite.policy");
    let log = path(dir.path(), "log.jsonl");
    let summary = ok_json(&[
        "compose",
        "--out",
        &composite,
        "--epsilon",
        "0.1",
        "--log",
        &log,
        &original,
    ]);
    assert_eq!(summary["rejected"], 0);
    assert_eq!(
        std::fs::read_to_string(&log).unwrap().lines().count(),
        summary["points"].as_u64().unwrap() as usize
    );

    let eval = |p: &str| {
        ok_json(&[
            "eval", "--policy", p, "--map", "Round", "--steps", "1000", "--seed", "9",
        ])
    };
    let (a, b) = (eval(&original), eval(&composite));
    let (ra, rb) = (
        a["total_reward"].as_i64().unwrap(),
        b["total_reward"].as_i64().unwrap(),
    );
    // At most one crash of difference.
    assert!((ra - rb).abs() <= 201, "original {ra}, composite {rb}");
    assert_eq!(a["steps"], 1000);
}

#[test]
fn eval_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "max_steps = 3000\n");
    let out = path(dir.path(), "p.policy");
    ok_json(&["train", "--map", "Round", "--config", &cfg, "--out", &out]);
    let trace = path(dir.path(), "trace.jsonl");
    let cli = ok_json(&[
        "eval", "--policy", &out, "--map", "Round", "--steps", "400", "--seed", "3", "--trace",
        &trace,
    ]);
    let file = PolicyFile::load(&out).unwrap();
    let lib =
        knaf::harness::evaluate(&file.policy, &knaf::lidar_sim::maps::round(), 400, 3).unwrap();
    assert_eq!(cli["total_reward"].as_i64().unwrap(), lib.total_reward);
    assert_eq!(cli["crashes"].as_u64().unwrap() as usize, lib.crashes);
    assert_eq!(
        std::fs::read_to_string(&trace).unwrap().lines().count(),
        400
    );
}

#[test]
fn crossval_prints_one_row_per_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "max_steps = 0\n");
    let mut pols = Vec::new();
    for name in ["a", "b", "c"] {
        let out = path(dir.path(), &format!("{name}.policy"));
        ok_json(&["train", "--map", "Round", "--config", &cfg, "--out", &out]);
        pols.push(out);
    }
    let mut args = vec![
        "crossval",
        "--steps",
        "200",
        "--maps",
        "Round",
        "Maze",
        "--policies",
    ];
    args.extend(pols.iter().map(String::as_str));
    let out = knaf(&args);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + pols.len());
    assert_eq!(rows[0], ["policy", "Round", "Maze"]);
    for (row, name) in rows[1..].iter().zip(["a", "b", "c"]) {
        assert_eq!(row[0], name);
        assert!(row[1..].iter().all(|v| v.parse::<i64>().is_ok()));
    }
}

#[test]
fn maps_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = knaf(&["maps", "--export", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let written: Vec<PathBuf> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(PathBuf::from)
        .collect();
    assert_eq!(written.len(), 4);
    for p in written {
        let map = knaf::harness::resolve_map(p.to_str().unwrap()).unwrap();
        assert_eq!(knaf::lidar_sim::maps::builtin(&map.name).unwrap(), map);
    }
}

#[test]
fn bad_inputs_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let junk = path(dir.path(), "junk.policy");
    std::fs::write(&junk, b"not a policy").unwrap();
    for args in [
        vec!["eval", "--policy", junk.as_str(), "--map", "Round"],
        vec!["eval", "--policy", "/nonexistent.policy", "--map", "Round"],
        vec!["train", "--map", "Nowhere", "--out", junk.as_str()],
        vec![
            "compose",
            "--out",
            junk.as_str(),
            "--density",
            "bogus",
            junk.as_str(),
        ],
    ] {
        let out = knaf(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.starts_with("error: "), "{err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
    let cfg = write_config(dir.path(), "alpah = 0.1\n");
    let out = knaf(&["train", "--map", "Round", "--config", &cfg, "--out", &junk]);
    assert!(!out.status.success());
}
