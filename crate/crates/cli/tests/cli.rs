use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().expect("sim runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn dual_prints_nonnegative_attractor_with_eta() {
    let out = sim(&["dual", "--scenario", "tandem", "--v", "100"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let gamma: Vec<f64> = serde_json::from_value(v["gamma_star"].clone()).unwrap();
    assert_eq!(gamma.len(), 2);
    assert!(gamma.iter().all(|g| *g >= 0.0));
    for key in ["g_value", "iterations", "eta", "L_hat"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["eta"].as_f64().unwrap() > 0.0);
}

#[test]
fn slackness_exit_codes() {
    let ok = sim(&["slackness", "--scenario", "multihop7"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(json(&ok)["eta"].as_f64().unwrap() > 0.0);
    let over = sim(&["slackness", "--scenario", "multihop7_overload"]);
    assert_eq!(over.status.code(), Some(2));
    assert_eq!(json(&over)["feasible"], serde_json::Value::Bool(false));
}

#[test]
fn validation_errors_exit_one() {
    assert_eq!(sim(&["run", "--scenario", "no_such_file.toml", "--v", "5"]).status.code(), Some(1));
    assert_eq!(sim(&["run", "--scenario", "tandem"]).status.code(), Some(1));
    assert_eq!(sim(&["run", "--scenario", "tandem", "--v", "5", "--discipline", "priority"]).status.code(), Some(1));
    assert_eq!(sim(&["run", "--scenario", "tandem", "--v", "0.5", "--horizon", "2000"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nqueue_count = 1\ndelta_max = 1\n[chain]\ntransition = [[1.0]]\n[[states]]\n[[states.actions]]\ncost = 0\narrivals = [-1]\nservices = [0]\n").unwrap();
    let out = sim(&["slackness", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn run_abort_exits_four() {
    let out = sim(&["run", "--scenario", "multihop7_overload", "--v", "5", "--horizon", "200000", "--no-dual", "--ceiling", "2000"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("instability"));
}

#[test]
fn run_writes_traces_that_feed_attraction_and_little_check() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let o = out_dir.to_str().unwrap();
    let run = sim(&["run", "--scenario", "multihop7", "--v", "50", "--horizon", "120000", "--seed", "4", "--out", o, "--emit-traces"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["report.json", "packets.csv", "backlog.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let header = std::fs::read_to_string(out_dir.join("packets.csv")).unwrap();
    assert!(header.starts_with("packet_id,queue_id,enqueue_slot,dequeue_slot,entry_backlog,is_null,end_to_end_delay"));

    let dual_path = dir.path().join("dual.json");
    let dual = sim(&["dual", "--scenario", "multihop7", "--v", "50", "--out", dual_path.to_str().unwrap()]);
    assert_eq!(dual.status.code(), Some(0));
    let trace = out_dir.join("backlog.csv");
    let fit = sim(&["attraction", "--trace", trace.to_str().unwrap(), "--dual", dual_path.to_str().unwrap()]);
    assert_eq!(fit.status.code(), Some(0), "{}", String::from_utf8_lossy(&fit.stderr));
    assert!(json(&fit)["decay_slope"].as_f64().unwrap() < 0.0);

    let packets = out_dir.join("packets.csv");
    let lc = sim(&["little-check", "--packets", packets.to_str().unwrap(), "--queue", "5", "--band", "1,60", "--lambda-min", "0.01"]);
    assert_eq!(lc.status.code(), Some(0), "{}", String::from_utf8_lossy(&lc.stderr));
    assert_eq!(json(&lc)["holds"], serde_json::Value::Bool(true));
}

fn sweep_csv(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("sweep.csv")).unwrap()
}

#[test]
fn small_sweep_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let t = std::time::Instant::now();
        let out = sim(&[
            "sweep", "--scenario", "tandem", "--v", "10", "--discipline", "lifo,fifo", "--horizon", "1000", "--seed", "1", "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(t.elapsed().as_secs_f64() < 5.0);
    }
    let csv = sweep_csv(&a);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "V,discipline,seed,avg_cost,avg_backlog,delay_mean,delay_p50,delay_p90,deviation_fraction,delivered,dropped"
    );
    assert_eq!(lines.count(), 2);
    assert_eq!(csv, sweep_csv(&b));
    assert!(a.join("summary.txt").exists());
    assert!(a.join("runs").join("V10_lifo_s1.json").exists());
}
