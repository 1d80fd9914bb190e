//! Experiment layer: TOML-backed run configuration, canned worm presets,
//! single-run reports, and the standard evaluation suite.
//!
//! A run is fully described by one [`ExperimentConfig`] (four TOML tables:
//! `[topology]`, `[worm]`, `[traffic]`, `[experiment]`) plus a seed. Reports
//! carry the config echo, outbreak facts, event counts, the ground-truth
//! forest at the detection instant, both reconstructions, and their scores.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{DistributionSpec, Seed, SimTime};
use crate::eval::{compare_paths, PathMetrics};
use crate::network::{
    HostId, Network, Protocol, ServiceKind, TopologyConfig, TopologyError,
};
use crate::sim::{
    Event, OutbreakInfo, OutbreakTrigger, SimError, SimOutcome, SimParams, Simulation,
};
use crate::traceback::PropagationGraph;
use crate::traffic::{TrafficConfig, TrafficConfigError};
use crate::worm::{LocalPrefProbs, ScanStrategy, WormConfig, WormConfigError};

/// Distinct stream for laying out the network so topology draws do not
/// consume from the simulation's own sequence.
const TOPOLOGY_SEED_SALT: u64 = 0x746f_706f_6c6f_6779; // "topology"

/// Run-level settings: everything outside the worm, traffic, and topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    /// Sliding-window length each monitor keeps, in milliseconds.
    pub window_ms: SimTime,
    /// When the outbreak broadcast fires.
    pub outbreak: OutbreakTrigger,
    pub seed: Seed,
    pub t_end_ms: SimTime,
    /// Parent candidates must connect strictly after their own infection.
    pub strict_causality: bool,
    /// Which server kinds the vulnerable hosts run.
    pub vulnerable_services: Vec<ServiceKind>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            window_ms: 1000,
            outbreak: OutbreakTrigger::InfectedFraction(0.5),
            seed: 1,
            t_end_ms: 60_000,
            strict_causality: false,
            vulnerable_services: vec![ServiceKind::HttpServer],
        }
    }
}

/// One complete run description, mirroring the TOML layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub worm: WormConfig,
    pub traffic: TrafficConfig,
    pub experiment: RunSettings,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Worm(#[from] WormConfigError),
    #[error(transparent)]
    Traffic(#[from] TrafficConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("unknown preset {0:?}; available: slammer, codered1, codered2")]
    UnknownPreset(String),
    #[error("experiment needs at least one vulnerable service kind")]
    NoVulnerableServices,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.worm.validate()?;
        self.traffic.validate()?;
        if self.experiment.vulnerable_services.is_empty() {
            return Err(ExperimentError::NoVulnerableServices);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

pub const PRESET_NAMES: [&str; 3] = ["slammer", "codered1", "codered2"];

/// The shared evaluation topology: 200 hosts dealt across four subnets with
/// a fully populated address space, so scans always land on a live host and
/// even TCP epidemics finish well inside a one-second window.
fn preset_topology(vulnerable: u32) -> TopologyConfig {
    TopologyConfig {
        host_count: 200,
        subnet_count: 4,
        slots_per_subnet: 50,
        vulnerable_count: vulnerable,
        link_delay_ms: 1,
    }
}

/// A canned worm profile by name.
///
/// * `slammer`: UDP, one probe every 4–8 ms, uniform scanning, 30
///   vulnerable hosts (UDP name servers).
/// * `codered1`: TCP, 23 concurrent connection attempts, uniform scanning,
///   28 vulnerable web servers.
/// * `codered2`: TCP, 25 concurrent attempts, locality-biased scanning
///   (1/8 anywhere, 4/8 same class A, 3/8 same class B), 28 vulnerable web
///   servers.
pub fn preset(name: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::default();
    match name {
        "slammer" => {
            cfg.topology = preset_topology(30);
            cfg.worm = WormConfig {
                name: "slammer".into(),
                transport: Protocol::Udp,
                probe_interval_ms: Some(DistributionSpec::Uniform { lo: 4, hi: 8 }),
                concurrent_connections: None,
                scan_strategy: ScanStrategy::UniformRandom,
                ..WormConfig::default()
            };
            cfg.experiment.vulnerable_services = vec![ServiceKind::DnsServer];
        }
        "codered1" => {
            cfg.topology = preset_topology(28);
            cfg.worm = WormConfig {
                name: "codered1".into(),
                transport: Protocol::Tcp,
                probe_interval_ms: None,
                concurrent_connections: Some(23),
                scan_strategy: ScanStrategy::UniformRandom,
                ..WormConfig::default()
            };
            cfg.experiment.vulnerable_services = vec![ServiceKind::HttpServer];
        }
        "codered2" => {
            cfg.topology = preset_topology(28);
            cfg.worm = WormConfig {
                name: "codered2".into(),
                transport: Protocol::Tcp,
                probe_interval_ms: None,
                concurrent_connections: Some(25),
                scan_strategy: ScanStrategy::LocalPreference,
                local_pref: LocalPrefProbs { p_random: 0.125, p_class_a: 0.5, p_class_b: 0.375 },
                ..WormConfig::default()
            };
            cfg.experiment.vulnerable_services = vec![ServiceKind::HttpServer];
        }
        other => return Err(ExperimentError::UnknownPreset(other.to_string())),
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Running one experiment
// ---------------------------------------------------------------------------

/// Pick the hosts that start infected: the explicit list when given,
/// otherwise the lowest `origin_count` vulnerable host ids.
pub fn resolve_origins(net: &Network, worm: &WormConfig) -> Result<Vec<HostId>, ExperimentError> {
    if !worm.origin_hosts.is_empty() {
        return Ok(worm.origin_hosts.clone());
    }
    let mut vulnerable = net.vulnerable_ids();
    vulnerable.sort_unstable();
    if worm.origin_count as usize > vulnerable.len() {
        return Err(WormConfigError::TooManyOrigins {
            requested: worm.origin_count,
            vulnerable: vulnerable.len() as u32,
        }
        .into());
    }
    vulnerable.truncate(worm.origin_count as usize);
    Ok(vulnerable)
}

fn kind_name(event: &Event) -> &'static str {
    match event {
        Event::ProbeSend { .. } => "ProbeSend",
        Event::ConnectionArrive { .. } => "ConnectionArrive",
        Event::InfectionComplete { .. } => "InfectionComplete",
        Event::RecoveryCheck { .. } => "RecoveryCheck",
        Event::NormalTraffic { .. } => "NormalTraffic",
        Event::OutbreakDetected { .. } => "OutbreakDetected",
        Event::QuerySend { .. } => "QuerySend",
        Event::ReplyArrive { .. } => "ReplyArrive",
    }
}

/// Everything worth keeping from one run, minus the raw trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub origins: Vec<HostId>,
    pub outbreak: Option<OutbreakInfo>,
    pub traceback_completed_ms: Option<SimTime>,
    pub end_clock_ms: SimTime,
    pub event_counts: BTreeMap<String, u64>,
    pub infections_total: u32,
    pub recoveries_total: u32,
    /// The true forest restricted to infections at the detection instant
    /// (the whole run when no outbreak fired).
    pub ground_truth: PropagationGraph,
    pub reconstruction_origins: Option<PropagationGraph>,
    pub reconstruction_extended: Option<PropagationGraph>,
    pub metrics_origins: Option<PathMetrics>,
    pub metrics_extended: Option<PathMetrics>,
    /// No reconstruction was produced (no outbreak, or the horizon cut the
    /// protocol short), so there is nothing to score.
    pub vacuous: bool,
}

/// A finished run: the distilled report plus the full simulation outcome
/// (event trace, ground truth, final host states).
pub struct ExperimentRun {
    pub report: RunReport,
    pub outcome: SimOutcome,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, ExperimentError> {
    cfg.validate()?;
    let mut topo_rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed ^ TOPOLOGY_SEED_SALT);
    let net = Network::build(&cfg.topology, &cfg.experiment.vulnerable_services, &mut topo_rng)?;
    let origins = resolve_origins(&net, &cfg.worm)?;
    let params = SimParams {
        window_ms: cfg.experiment.window_ms,
        trigger: cfg.experiment.outbreak,
        strict_causality: cfg.experiment.strict_causality,
        t_end_ms: cfg.experiment.t_end_ms,
        seed: cfg.experiment.seed,
    };
    let sim = Simulation::new(net, &origins, cfg.worm.clone(), cfg.traffic.clone(), params)?;
    let outcome = sim.run();

    let cutoff = outcome
        .outbreak
        .map(|o| o.trigger_time)
        .unwrap_or(cfg.experiment.t_end_ms);
    let ground_truth = PropagationGraph::ground_truth(&outcome.truth, cutoff);
    let metrics_origins = outcome
        .reconstruction_origins
        .as_ref()
        .map(|g| compare_paths(g, &ground_truth));
    let metrics_extended = outcome
        .reconstruction_extended
        .as_ref()
        .map(|g| compare_paths(g, &ground_truth));
    let mut event_counts: BTreeMap<String, u64> = BTreeMap::new();
    for entry in &outcome.log {
        *event_counts.entry(kind_name(&entry.event).to_string()).or_insert(0) += 1;
    }
    let report = RunReport {
        config: cfg.clone(),
        origins,
        outbreak: outcome.outbreak,
        traceback_completed_ms: outcome.traceback_completed_ms,
        end_clock_ms: outcome.end_clock_ms,
        event_counts,
        infections_total: outcome.truth.infections.len() as u32,
        recoveries_total: outcome.truth.recoveries.len() as u32,
        ground_truth,
        reconstruction_origins: outcome.reconstruction_origins.clone(),
        reconstruction_extended: outcome.reconstruction_extended.clone(),
        metrics_origins,
        metrics_extended,
        vacuous: outcome.reconstruction_extended.is_none(),
    };
    Ok(ExperimentRun { report, outcome })
}

// ---------------------------------------------------------------------------
// The standard suite
// ---------------------------------------------------------------------------

/// One planned suite run: preset, 1-based run index, seed, and how many
/// origins the worm starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitePlanEntry {
    pub test_plan: String,
    pub experiment: u32,
    pub seed: Seed,
    pub origin_count: u32,
}

/// Three presets, three seeded runs each. The first Code Red variant runs
/// with several simultaneous origins (3, 2, then 4) to exercise
/// multi-origin identification; the others start from a single host.
pub fn suite_plan() -> Vec<SuitePlanEntry> {
    let mut plan = Vec::new();
    for preset_name in PRESET_NAMES {
        for (i, seed) in [1u64, 2, 3].into_iter().enumerate() {
            let origin_count = if preset_name == "codered1" { [3, 2, 4][i] } else { 1 };
            plan.push(SuitePlanEntry {
                test_plan: preset_name.to_string(),
                experiment: i as u32 + 1,
                seed,
                origin_count,
            });
        }
    }
    plan
}

/// One scored suite run under one rule; a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub test_plan: String,
    pub experiment: u32,
    pub seed: Seed,
    pub rule: String,
    pub metrics: PathMetrics,
}

/// Mean scores for one rule across the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAggregate {
    pub rule: String,
    pub runs: u32,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub origins_correct_runs: u32,
}

pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub aggregates: Vec<RuleAggregate>,
    pub reports: Vec<RunReport>,
}

pub const SUITE_CSV_HEADER: &str =
    "test_plan,experiment,seed,rule,tp,fn,fp,precision,recall,origins_correct";

pub fn suite_csv(rows: &[SuiteRow]) -> String {
    let mut out = String::from(SUITE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{}\n",
            r.test_plan,
            r.experiment,
            r.seed,
            r.rule,
            r.metrics.tp,
            r.metrics.fn_,
            r.metrics.fp,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.origins_correct
        ));
    }
    out
}

fn aggregate(rows: &[SuiteRow], rule: &str) -> RuleAggregate {
    let picked: Vec<&SuiteRow> = rows.iter().filter(|r| r.rule == rule).collect();
    let n = picked.len().max(1) as f64;
    RuleAggregate {
        rule: rule.to_string(),
        runs: picked.len() as u32,
        mean_precision: picked.iter().map(|r| r.metrics.precision).sum::<f64>() / n,
        mean_recall: picked.iter().map(|r| r.metrics.recall).sum::<f64>() / n,
        origins_correct_runs: picked.iter().filter(|r| r.metrics.origins_correct).count() as u32,
    }
}

/// Run the full suite. Every run that produced reconstructions contributes
/// two rows, one per rule.
pub fn run_suite() -> Result<SuiteReport, ExperimentError> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for entry in suite_plan() {
        let mut cfg = preset(&entry.test_plan)?;
        cfg.experiment.seed = entry.seed;
        cfg.worm.origin_count = entry.origin_count;
        let run = run_experiment(&cfg)?;
        for (rule, metrics) in [
            ("origins", run.report.metrics_origins),
            ("extended", run.report.metrics_extended),
        ] {
            if let Some(metrics) = metrics {
                rows.push(SuiteRow {
                    test_plan: entry.test_plan.clone(),
                    experiment: entry.experiment,
                    seed: entry.seed,
                    rule: rule.to_string(),
                    metrics,
                });
            }
        }
        reports.push(run.report);
    }
    let aggregates = vec![aggregate(&rows, "origins"), aggregate(&rows, "extended")];
    Ok(SuiteReport { rows, aggregates, reports })
}
