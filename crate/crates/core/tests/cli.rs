use std::path::Path;
use std::process::Command;

use sake::harness::config::var_battery;
use sake::harness::pipeline::SystemSpec;
use sake::selector::Method;
use sake::sysrisk::CandidateGrid;

fn sake(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sake"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn single_step_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 7] = [
        &["gen", "--system", "linear", "--lag", "2", "--n-traj", "30", "--t", "40", "--seed", "3", "--out", "p.sake"],
        &["perturb", "--in", "p.sake", "--kind", "random-mask", "--mask-fraction", "0.2", "--out", "m.sake"],
        &["anchors", "--in", "p.sake", "--grid", "1..6", "--out", "a.json", "--curve", "c.csv"],
        &["sweep", "--in", "p.sake", "--grid", "1..6", "--out", "o.json"],
        &["select", "--in", "p.sake", "--grid", "1..6", "--anchors", "a.json", "--method", "asha", "--out", "s.json"],
        &["eval", "--selection", "s.json", "--oracle", "o.json", "--eps", "0.05,0.1", "--out", "m.csv"],
        &["aggregate", "m.csv", "--out", "agg.csv"],
    ];
    for args in steps {
        let out = sake(d, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let agg = std::fs::read_to_string(d.join("agg.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
    assert!(agg.lines().nth(1).unwrap().contains(",asha,"));
}

#[test]
fn run_exit_code_tracks_cell_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = var_battery(1, 2);
    cfg.grid = CandidateGrid::range(1, 5).unwrap();
    cfg.methods = vec![Method::SystemCore, Method::Sake];
    std::fs::write(d.join("ok.json"), cfg.to_json().unwrap()).unwrap();
    let out = sake(d, &["run", "--config", "ok.json", "--out", "run_ok"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("run_ok/report/aggregate.txt").is_file());

    // a trajectory file too short for the grid: its cells fail, the others run
    let gen = sake(d, &["gen", "--system", "linear", "--lag", "1", "--n-traj", "5", "--t", "5", "--out", "tiny.sake"]);
    assert!(gen.status.success());
    cfg.systems.push(SystemSpec::File(d.join("tiny.sake")));
    std::fs::write(d.join("bad.json"), cfg.to_json().unwrap()).unwrap();
    let out = sake(d, &["run", "--config", "bad.json", "--out", "run_bad"]);
    assert!(!out.status.success());
    assert!(d.join("run_bad/manifest.json").is_file());
    let out = sake(d, &["run", "--config", "bad.json", "--out", "run_ff", "--fail-fast"]);
    assert!(!out.status.success());
    assert!(!d.join("run_ff/manifest.json").exists());

    // the failed system's cells render as gaps and make the report exit non-zero
    let out = sake(d, &["report", "run_bad"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let gap_row = text.lines().find(|l| l.contains("tiny")).unwrap();
    assert!(gap_row.split_whitespace().any(|c| c == "-"), "{gap_row}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&var_battery(1, 0).to_json().unwrap()).unwrap();
    v["rhoo"] = serde_json::json!(0.1);
    std::fs::write(dir.path().join("c.json"), v.to_string()).unwrap();
    let out = sake(dir.path(), &["run", "--config", "c.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rhoo"));
}
