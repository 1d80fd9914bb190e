//! End-to-end protocol properties: reconstruction uses only what agents can
//! see, trace replay matches the live run, and the command-line pipeline is
//! consistent with the library.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use wormtrace::engine::{log_from_jsonl, log_to_jsonl};
use wormtrace::experiment::{preset, run_experiment, run_suite, suite_csv};
use wormtrace::sim::{reconstruct_from_trace, Event};

/// Drop the ground-truth annotation from every connection event in a
/// JSON-lines trace, as if the trace came from a packet capture that never
/// knew which flows were attacks.
fn strip_attack_flags(jsonl: &str) -> String {
    let mut out = String::new();
    for line in jsonl.lines().filter(|l| !l.trim().is_empty()) {
        let mut value: serde_json::Value = serde_json::from_str(line).expect("valid trace line");
        if let Some(payload) = value.get_mut("payload").and_then(|p| p.as_object_mut()) {
            payload.remove("is_attack");
        }
        out.push_str(&value.to_string());
        out.push('\n');
    }
    out
}

#[test]
fn reconstruction_ignores_ground_truth_annotations() {
    for profile in ["slammer", "codered1", "codered2"] {
        let mut cfg = preset(profile).expect("bundled profile");
        cfg.experiment.seed = 42;
        let run = run_experiment(&cfg).expect("run completes");
        let window = cfg.experiment.window_ms;

        let full = log_to_jsonl(&run.outcome.log);
        let stripped = strip_attack_flags(&full);
        assert_ne!(full, stripped, "the stripped trace really lost its annotations");

        let from_full =
            reconstruct_from_trace(&log_from_jsonl(&full).expect("parses"), window, false)
                .expect("complete protocol in trace");
        let from_stripped =
            reconstruct_from_trace(&log_from_jsonl(&stripped).expect("parses"), window, false)
                .expect("complete protocol in trace");
        assert_eq!(from_full, from_stripped, "{profile}: annotations leaked into trace-back");
    }
}

#[test]
fn trace_replay_equals_the_live_reconstruction_on_every_profile() {
    for profile in ["slammer", "codered1", "codered2"] {
        for seed in [1, 9, 77] {
            let mut cfg = preset(profile).expect("bundled profile");
            cfg.experiment.seed = seed;
            let run = run_experiment(&cfg).expect("run completes");
            let replay =
                reconstruct_from_trace(&run.outcome.log, cfg.experiment.window_ms, false)
                    .expect("complete protocol in trace");
            assert_eq!(
                Some(&replay.origins_rule),
                run.report.reconstruction_origins.as_ref(),
                "{profile} seed {seed}"
            );
            assert_eq!(
                Some(&replay.extended_rule),
                run.report.reconstruction_extended.as_ref(),
                "{profile} seed {seed}"
            );
        }
    }
}

#[test]
fn beacons_make_every_participant_visible_in_the_trace() {
    let mut cfg = preset("slammer").expect("bundled profile");
    cfg.experiment.seed = 8;
    let run = run_experiment(&cfg).expect("run completes");
    let outbreak = run.report.outbreak.expect("outbreak fires");

    let mut self_queries = 0u32;
    for entry in &run.outcome.log {
        if let Event::QuerySend { from, to } = entry.event {
            if from == to {
                self_queries += 1;
            }
        }
    }
    assert_eq!(
        self_queries, outbreak.infected_at_trigger,
        "each participant announces itself exactly once"
    );
}

fn run_cli(exe: &str, args: &[&str], dir: Option<&Path>) -> String {
    let mut cmd = Command::new(exe);
    cmd.args(args);
    if let Some(dir) = dir {
        cmd.arg("--out").arg(dir);
    }
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "wormtrace {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).expect("utf-8 output")
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("file exists")).expect("valid json")
}

#[test]
fn cli_traceback_and_evaluate_agree_with_the_simulating_run() {
    let exe = env!("CARGO_BIN_EXE_wormtrace");
    let root = tempfile::tempdir().expect("tempdir");
    let sim_dir = root.path().join("sim");
    run_cli(
        exe,
        &["simulate", "--preset", "codered2", "--seed", "12"],
        Some(&sim_dir),
    );
    let report = json_file(&sim_dir.join("report.json"));

    // Rebuilding from the trace file alone reproduces the graphs the
    // simulating process reported.
    let tb_dir = root.path().join("tb");
    run_cli(
        exe,
        &[
            "traceback",
            sim_dir.join("trace.jsonl").to_str().expect("utf-8 path"),
            "--window-ms",
            "1000",
        ],
        Some(&tb_dir),
    );
    let rebuilt = json_file(&tb_dir.join("reconstruction.json"));
    assert_eq!(rebuilt["origins_rule"], report["reconstruction_origins"]);
    assert_eq!(rebuilt["extended_rule"], report["reconstruction_extended"]);

    // Scoring the exported graphs reproduces the metrics in the report.
    let eval_dir = root.path().join("eval");
    run_cli(
        exe,
        &[
            "evaluate",
            sim_dir.join("reconstruction_extended.json").to_str().expect("utf-8 path"),
            sim_dir.join("ground_truth.json").to_str().expect("utf-8 path"),
        ],
        Some(&eval_dir),
    );
    assert_eq!(json_file(&eval_dir.join("metrics.json")), report["metrics_extended"]);

    // The DOT diff draws every edge class.
    let dot = run_cli(
        exe,
        &[
            "evaluate",
            sim_dir.join("reconstruction_extended.json").to_str().expect("utf-8 path"),
            sim_dir.join("ground_truth.json").to_str().expect("utf-8 path"),
            "--format",
            "dot",
        ],
        None,
    );
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("->"));
}

#[test]
fn cli_suite_csv_matches_the_library() {
    let exe = env!("CARGO_BIN_EXE_wormtrace");
    let from_cli = run_cli(exe, &["report"], None);
    let suite = run_suite().expect("suite runs");
    assert_eq!(from_cli, suite_csv(&suite.rows));
}
