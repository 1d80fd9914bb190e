//! Acceptance checks, one per criterion the project commits to. Each test
//! prints a single `criterion N (...): PASS/FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`).

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{oracle_parent_extended, random_tiny_config};
use wormtrace::engine::log_to_jsonl;
use wormtrace::experiment::{preset, run_experiment, run_suite, suite_plan};
use wormtrace::network::Protocol;
use wormtrace::sim::Event;
use wormtrace::traceback::{select_parent_extended, MonitorAgent, Reply, WindowRecord};
use wormtrace::worm::{choose_branch, sample_recovery_dwell, LocalPrefProbs, LocalityBranch};

fn criterion<F: FnOnce() + UnwindSafe>(number: u8, label: &str, body: F) {
    let result = catch_unwind(body);
    match result {
        Ok(()) => println!("criterion {number} ({label}): PASS"),
        Err(payload) => {
            println!("criterion {number} ({label}): FAIL");
            resume_unwind(payload);
        }
    }
}

/// Criterion 1: the five-candidate election. Two sources deny infection,
/// one infected source connected before it was itself infected, and two
/// qualify; the earlier connection of the qualifying pair wins.
#[test]
fn criterion_1_candidate_election() {
    criterion(1, "five-candidate parent election", || {
        let started = Instant::now();

        let mut agent = MonitorAgent::new(5, 1_000);
        for (src, t_init) in [(6, 100), (14, 110), (16, 120), (2, 130), (3, 140)] {
            agent.record_incoming(WindowRecord {
                src,
                protocol: Protocol::Tcp,
                t_init,
                arrived: t_init + 1,
            });
        }
        agent.freeze(200, 201);
        let queried = agent.begin_queries(true, false);
        assert_eq!(queried, vec![6, 14, 16, 2, 3], "one query per distinct source, window order");

        // Source 6 was infected only after its connection (not causal);
        // 14 and 16 are clean; 2 and 3 both qualify, and 2 connected first.
        agent.receive_reply(6, Reply::Yes { t_infect: 150 }, false);
        agent.receive_reply(14, Reply::No, false);
        agent.receive_reply(16, Reply::No, false);
        agent.receive_reply(2, Reply::Yes { t_infect: 90 }, false);
        agent.receive_reply(3, Reply::Yes { t_infect: 95 }, false);

        assert!(agent.resolved);
        assert_eq!(agent.parent_extended, Some(2), "earliest causally consistent source");
        assert_eq!(select_parent_extended(&agent.candidates, false), Some(2));
        assert_eq!(agent.parent_origins, Some(6), "first yes in window order, causal or not");

        assert!(started.elapsed() < Duration::from_secs(1));
    });
}

/// Criterion 2: across the standard suite (three worm profiles, three seeds
/// each, 1000 ms windows, default traffic), mean precision and recall stay
/// at or above 0.90 under both rules, precision equals recall whenever a
/// reconstruction nails the origin and infected sets, and the whole suite
/// stays under a minute.
#[test]
fn criterion_2_suite_precision_recall() {
    criterion(2, "suite precision/recall >= 0.90", || {
        let started = Instant::now();
        let suite = run_suite().expect("suite runs");
        assert_eq!(suite.reports.len(), 9);

        for rule in ["origins", "extended"] {
            let rows: Vec<_> = suite.rows.iter().filter(|r| r.rule == rule).collect();
            assert_eq!(rows.len(), 9, "every run is scored under the {rule} rule");
            let mean_p = rows.iter().map(|r| r.metrics.precision).sum::<f64>() / rows.len() as f64;
            let mean_r = rows.iter().map(|r| r.metrics.recall).sum::<f64>() / rows.len() as f64;
            assert!(mean_p >= 0.90, "{rule} mean precision {mean_p:.4}");
            assert!(mean_r >= 0.90, "{rule} mean recall {mean_r:.4}");
        }

        for report in &suite.reports {
            let truth = &report.ground_truth;
            let scored = [
                (&report.reconstruction_origins, &report.metrics_origins),
                (&report.reconstruction_extended, &report.metrics_extended),
            ];
            for (graph, metrics) in scored {
                let (Some(graph), Some(metrics)) = (graph, metrics) else {
                    panic!("suite runs must complete trace-back")
                };
                if graph.origins == truth.origins && graph.infected == truth.infected {
                    assert_eq!(
                        metrics.precision, metrics.recall,
                        "matching origin/infected sets force precision == recall"
                    );
                }
            }
        }

        assert!(started.elapsed() < Duration::from_secs(60));
    });
}

/// Criterion 3: the reconstructed origin set equals the true origin set in
/// every suite run, including the multi-origin runs (3, 2, and 4 origins).
#[test]
fn criterion_3_origin_identification() {
    criterion(3, "origin sets exact in all nine runs", || {
        let suite = run_suite().expect("suite runs");
        let plan = suite_plan();
        assert_eq!(plan.len(), suite.reports.len());

        let multi: Vec<u32> =
            plan.iter().filter(|e| e.origin_count > 1).map(|e| e.origin_count).collect();
        assert_eq!(multi, vec![3, 2, 4], "one profile runs with several origins");

        for (entry, report) in plan.iter().zip(&suite.reports) {
            let truth = &report.ground_truth;
            assert_eq!(report.origins.len() as u32, entry.origin_count);
            let mut configured = report.origins.clone();
            configured.sort_unstable();
            assert_eq!(truth.origins, configured, "ground truth roots are the seeded origins");
            for graph in [&report.reconstruction_origins, &report.reconstruction_extended] {
                let graph = graph.as_ref().expect("suite runs must complete trace-back");
                assert_eq!(
                    graph.origins, truth.origins,
                    "{} run {} ({:?})",
                    entry.test_plan, entry.experiment, graph.rule
                );
            }
        }
    });
}

/// Criterion 4: on at least 200 randomized networks of at most ten hosts,
/// the parent elected for every participating host equals a brute-force
/// oracle that scans the full ground-truth connection log. Zero mismatches.
#[test]
fn criterion_4_oracle_equivalence() {
    criterion(4, "parent election matches brute-force oracle", || {
        let mut networks = 0u32;
        let mut comparisons = 0u64;
        let mut seed = 0u64;
        while networks < 200 {
            seed += 1;
            assert!(seed <= 1_000, "too few runs reached an outbreak ({networks} so far)");
            let cfg = random_tiny_config(seed);
            let run = run_experiment(&cfg).expect("generated configs are valid");
            let Some(outbreak) = run.outcome.outbreak else { continue };
            if run.outcome.reconstruction_extended.is_none() {
                continue;
            }
            networks += 1;
            for agent in &run.outcome.agents {
                if !agent.participant {
                    continue;
                }
                let expected = oracle_parent_extended(
                    &run.outcome.truth,
                    &outbreak,
                    cfg.topology.link_delay_ms,
                    cfg.experiment.window_ms,
                    agent.host,
                );
                assert_eq!(
                    agent.parent_extended, expected,
                    "host {} disagrees with the oracle (generator seed {seed})",
                    agent.host
                );
                comparisons += 1;
            }
        }
        assert!(networks >= 200);
        assert!(comparisons >= 400, "expected many per-host comparisons, got {comparisons}");
    });
}

/// Criterion 5: shrinking the window cannot raise recall (paired seeds,
/// UDP profile), and growing it past the point where it already covers the
/// whole epidemic changes nothing at all.
#[test]
fn criterion_5_window_monotonicity() {
    criterion(5, "window monotonicity", || {
        let mut widened_strictly = false;
        for seed in [21, 22, 23, 24, 25] {
            let mut narrow = preset("slammer").expect("bundled profile");
            narrow.experiment.seed = seed;
            narrow.experiment.window_ms = 50;
            let mut wide = narrow.clone();
            wide.experiment.window_ms = 1_000;

            let narrow_recall = run_experiment(&narrow)
                .expect("run completes")
                .report
                .metrics_extended
                .expect("trace-back completes")
                .recall;
            let wide_recall = run_experiment(&wide)
                .expect("run completes")
                .report
                .metrics_extended
                .expect("trace-back completes")
                .recall;
            assert!(
                wide_recall >= narrow_recall,
                "seed {seed}: recall {wide_recall:.4} @1000ms vs {narrow_recall:.4} @50ms"
            );
            widened_strictly |= wide_recall > narrow_recall;
        }
        assert!(widened_strictly, "a 50 ms window should lose at least one early edge");

        // Beyond full coverage, the window stops mattering entirely.
        let runs: Vec<_> = [1_000, 2_000, 5_000]
            .into_iter()
            .map(|window| {
                let mut cfg = preset("slammer").expect("bundled profile");
                cfg.experiment.seed = 1;
                cfg.experiment.window_ms = window;
                run_experiment(&cfg).expect("run completes")
            })
            .collect();
        for other in &runs[1..] {
            assert_eq!(
                log_to_jsonl(&runs[0].outcome.log),
                log_to_jsonl(&other.outcome.log),
                "trace is window-independent once the window covers the run"
            );
            assert_eq!(runs[0].report.reconstruction_origins, other.report.reconstruction_origins);
            assert_eq!(
                runs[0].report.reconstruction_extended,
                other.report.reconstruction_extended
            );
        }
    });
}

fn read_sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output directory exists")
        .map(|entry| {
            let entry = entry.expect("listable");
            let name = entry.file_name().into_string().expect("utf-8 name");
            (name, fs::read(entry.path()).expect("readable"))
        })
        .collect();
    files.sort();
    files
}

fn simulate_to_dir(exe: &str, profile: &str, seed: u64, dir: &Path) {
    let status = Command::new(exe)
        .args(["simulate", "--preset", profile, "--seed", &seed.to_string()])
        .arg("--out")
        .arg(dir)
        .status()
        .expect("binary runs");
    assert!(status.success());
}

/// Criterion 6: re-running any profile with the same seed reproduces every
/// output file byte for byte; a different seed produces a different trace.
#[test]
fn criterion_6_file_determinism() {
    criterion(6, "byte-identical outputs per seed", || {
        let exe = env!("CARGO_BIN_EXE_wormtrace");
        for profile in ["slammer", "codered1", "codered2"] {
            let root = tempfile::tempdir().expect("tempdir");
            let first = root.path().join("first");
            let second = root.path().join("second");
            let reseeded = root.path().join("reseeded");
            simulate_to_dir(exe, profile, 5, &first);
            simulate_to_dir(exe, profile, 5, &second);
            simulate_to_dir(exe, profile, 6, &reseeded);

            let first_files = read_sorted_files(&first);
            assert_eq!(first_files, read_sorted_files(&second), "{profile}: same seed");
            let names: Vec<&str> = first_files.iter().map(|(n, _)| n.as_str()).collect();
            for expected in ["config.toml", "trace.jsonl", "report.json", "ground_truth.json"] {
                assert!(names.contains(&expected), "{profile}: missing {expected}");
            }

            let trace = |d: &Path| fs::read(d.join("trace.jsonl")).expect("trace written");
            assert_ne!(trace(&first), trace(&reseeded), "{profile}: seeds must matter");
        }
    });
}

/// Criterion 7: the sampled distributions behave: UDP probe gaps stay in
/// [4, 8] ms, the geometric recovery dwell has the right mean, and the
/// locality branch frequencies match their configured weights.
#[test]
fn criterion_7_distribution_checks() {
    criterion(7, "probe-gap / dwell / locality distributions", || {
        // Per-host gaps between consecutive probe sends in a real run.
        let mut cfg = preset("slammer").expect("bundled profile");
        cfg.experiment.seed = 3;
        let run = run_experiment(&cfg).expect("run completes");
        let mut last_probe: BTreeMap<u32, u64> = BTreeMap::new();
        let mut gaps = 0u32;
        for entry in &run.outcome.log {
            if let Event::ProbeSend { src } = entry.event {
                if let Some(prev) = last_probe.insert(src, entry.time_ms) {
                    let gap = entry.time_ms - prev;
                    assert!((4..=8).contains(&gap), "host {src} probe gap {gap}");
                    gaps += 1;
                }
            }
        }
        assert!(gaps >= 100, "need a real sample, saw {gaps} gaps");

        // Mean geometric dwell at p = 1e-4 over 1e4 samples: within 5% of 1e4.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = 10_000u32;
        let mean = (0..samples)
            .map(|_| sample_recovery_dwell(&mut rng, 1e-4).expect("p > 0") as f64)
            .sum::<f64>()
            / samples as f64;
        assert!((mean - 1e4).abs() <= 0.05 * 1e4, "dwell mean {mean:.1}");

        // Locality branch frequencies over 1e5 draws: within 3 sigma of
        // (1/8, 4/8, 3/8).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000u32;
        let mut counts = [0u32; 3];
        for _ in 0..draws {
            match choose_branch(&mut rng, LocalPrefProbs::default()) {
                LocalityBranch::Random => counts[0] += 1,
                LocalityBranch::SameClassA => counts[1] += 1,
                LocalityBranch::SameClassB => counts[2] += 1,
            }
        }
        for (count, p) in counts.into_iter().zip([0.125, 0.5, 0.375]) {
            let observed = count as f64 / draws as f64;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (observed - p).abs() <= 3.0 * sigma,
                "branch frequency {observed:.4} vs {p} (sigma {sigma:.5})"
            );
        }
    });
}
