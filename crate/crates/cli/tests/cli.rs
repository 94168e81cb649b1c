use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use snde_core::training::Checkpoint;

fn snde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snde"))
        .args(args)
        .env("SNDE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.in");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn mean_of_column(csv: &str, col: usize) -> f64 {
    let vals: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn two_body_checkpoint_records_table_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "system=two_body\nepochs=1\ntrajectories=2\n");
    let out = dir.path().join("run");
    let o = snde(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("checkpoint.txt")).unwrap();
    assert!(text.contains("\ngamma=8\n"));
    assert!(text.contains("\nhidden_width=128\n"));
    assert!(text.contains("\nhidden_layers=2\n"));
    let ck = Checkpoint::from_text(&text).unwrap();
    assert_eq!(ck.net.shapes().len(), 3);
    assert!(out.join("loss.csv").exists());
    assert!(out.join("config.txt").exists());
}

#[test]
fn oracle_evaluation_is_near_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "system=rigid_body\ntest_trials=4\neval_horizon=20\n");
    let out = dir.path().join("oracle");
    let o = snde(&["eval", "--config", &cfg, "--out", out.to_str().unwrap(), "--oracle"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = fs::read_to_string(out.join("eval/aggregate_state.csv")).unwrap();
    assert!(agg.starts_with("t,mean,ci_low,ci_high\n"));
    assert!(mean_of_column(&agg, 1) < 1e-5);
    for k in 0..4 {
        let trial = fs::read_to_string(out.join(format!("eval/trial_{k:03}.csv"))).unwrap();
        assert!(trial.starts_with("t,rel_err_state,rel_err_constraint\n"));
    }
    let stats = fs::read_to_string(out.join("eval/stats.csv")).unwrap();
    assert_eq!(stats.lines().next(), Some("trial,accepted,rejected,rhs_evals,stable_time"));
    assert_eq!(stats.lines().count(), 5);
}

#[test]
fn sweep_produces_one_model_per_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "system=rigid_body\nepochs=2\ntrajectories=3\ntrain_horizon=2\nhidden_width=8\n\
         test_trials=2\neval_horizon=5\ngamma_sweep=1,8,32\n",
    );
    let out = dir.path().join("sweep");
    let o = snde(&["sweep-gamma", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for g in ["1", "8", "32"] {
        let d = out.join(format!("gamma_{g}"));
        let ck = Checkpoint::from_text(&fs::read_to_string(d.join("checkpoint.txt")).unwrap()).unwrap();
        assert_eq!(ck.config.gamma.to_string(), g);
        assert!(d.join("eval/aggregate_state.csv").exists());
    }
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn flags_override_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "system=dc_converter\ntrajectories=2\ngamma=1\n");
    let out = dir.path().join("gen");
    let o = snde(&["generate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7", "--gamma", "3"]);
    assert!(o.status.success());
    let snap = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(snap.contains("\nseed=7\n") && snap.contains("\ngamma=3\n"));
    let meta = fs::read_to_string(out.join("dataset.meta")).unwrap();
    assert!(meta.contains("system=dc_converter\nseed=7\n"));
    let csv = fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert!(csv.starts_with("traj_id,t,u_0,u_1,u_2\n"));
}

#[test]
fn measure_writes_hellinger_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "system=double_pendulum\nmodel=hybrid\nepochs=1\ntrain_horizon=1\nhidden_width=8\n\
         measure_horizon=12\nmeasure_burn_in=2\nmeasure_trials=2\nmeasure_bins=4\n",
    );
    let out = dir.path().join("m");
    let o = snde(&["measure", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("hellinger.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let h: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&h));
    }
    assert!(out.join("gamma_0/measure/histogram_000.csv").exists());
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = snde(&["frobnicate", "--config", "x"]);
    assert_eq!(o.status.code(), Some(1));
    let o = snde(&["train", "--config", dir.path().join("absent").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let bad = config(dir.path(), "system=warp_drive\n");
    let o = snde(&["train", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let out = dir.path().join("mixed");
    let dc = config(dir.path(), "system=dc_converter\ntrajectories=1\n");
    assert!(snde(&["generate", "--config", &dc, "--out", out.to_str().unwrap()]).status.success());
    let rb = config(dir.path(), "system=rigid_body\nepochs=1\n");
    let o = snde(&["train", "--config", &rb, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = snde(&["eval", "--config", &rb, "--out", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
