//! Exercises the binary the way an operator would: real process spawns,
//! real files, and the documented exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowgate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowgate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary spawns")
}

fn write_scenario(dir: &Path) -> String {
    let path = dir.join("s.toml");
    fs::write(
        &path,
        r#"
name = "cli-test"
active_flows = 40.0
new_flows_per_sec = 10.0
packet_size = 970
rate_bits_per_sec = 4e6
duration_s = 2.0
"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_artifacts_and_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path());

    for out in ["a", "b"] {
        let o = flowgate(
            tmp.path(),
            &["run", "--scenario", &scenario, "--seed", "7", "--out", out],
        );
        assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(tmp.path().join("a/metrics.json")).unwrap();
    let b = fs::read(tmp.path().join("b/metrics.json")).unwrap();
    assert_eq!(a, b, "same seed, different metrics bytes");
    assert_eq!(
        fs::read(tmp.path().join("a/flows.jsonl")).unwrap(),
        fs::read(tmp.path().join("b/flows.jsonl")).unwrap()
    );

    let m: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(m["run"]["seed"], 7);
    assert!(m["generated"].as_u64().unwrap() > 0);
    let flows = fs::read_to_string(tmp.path().join("a/flows.jsonl")).unwrap();
    assert_eq!(
        flows.lines().count() as u64,
        m["flows_exported"].as_u64().unwrap()
    );
}

#[test]
fn an_invalid_scenario_exits_one_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(
        &path,
        "name = \"bad\"\nactive_flows = 40.0\nnew_flows_per_sec = 10.0\npacket_size = 10\nrate_bits_per_sec = 4e6\nduration_s = 2.0\n",
    )
    .unwrap();

    let o = flowgate(
        tmp.path(),
        &["run", "--scenario", &path.display().to_string(), "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("packet_size"), "diagnostic was: {stderr}");
}

#[test]
fn a_misspelled_key_in_the_scenario_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("typo.toml");
    fs::write(&path, "name = \"typo\"\nactive_flowz = 40.0\n").unwrap();

    let o = flowgate(
        tmp.path(),
        &["run", "--scenario", &path.display().to_string(), "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("active_flowz"), "diagnostic was: {stderr}");
}

#[test]
fn unknown_flags_are_usage_errors_not_invariant_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowgate(tmp.path(), &["run", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn a_generated_trace_replays_to_the_same_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path());

    let o = flowgate(tmp.path(), &["gen", "--scenario", &scenario, "--out", "g"]);
    assert!(o.status.success());
    let trace = tmp.path().join("g/trace.jsonl");
    assert!(trace.exists());

    let direct = flowgate(tmp.path(), &["run", "--scenario", &scenario, "--out", "d"]);
    assert!(direct.status.success());
    let replay = flowgate(
        tmp.path(),
        &[
            "run",
            "--scenario",
            &scenario,
            "--trace",
            &trace.display().to_string(),
            "--out",
            "r",
        ],
    );
    assert!(replay.status.success(), "stderr: {}", String::from_utf8_lossy(&replay.stderr));

    assert_eq!(
        fs::read(tmp.path().join("d/metrics.json")).unwrap(),
        fs::read(tmp.path().join("r/metrics.json")).unwrap(),
        "trace replay diverged from direct generation"
    );
}

#[test]
fn sweep_writes_the_pinned_csv_header() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flowgate(tmp.path(), &["sweep", "--out", "sw"]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,flows,births,dpi,offload,drop_pct,cpu_load,host_frac,hw_frac,occ_peak,backlog_peak"
    );
    assert_eq!(lines.count(), 20, "one row per matrix cell");
}

#[test]
fn compare_writes_one_row_per_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path());

    let o = flowgate(tmp.path(), &["compare", "--scenario", &scenario, "--out", "c"]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(tmp.path().join("c/compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scenario,metric,offload_off,offload_on,delta");
    assert_eq!(lines.len(), 7);
    assert!(lines[1..].iter().all(|l| l.starts_with("cli-test,")));
}
