//! Shared test support: a brute-force parent oracle that works straight off
//! the ground-truth connection log, and generators for small randomized
//! simulation setups.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wormtrace::engine::{DistributionSpec, SimTime};
use wormtrace::network::{GroundTruth, HostId, ServiceKind};
use wormtrace::sim::{OutbreakInfo, OutbreakTrigger};
use wormtrace::experiment::ExperimentConfig;
use wormtrace::traffic::PairSelection;
use wormtrace::worm::ScanStrategy;

/// Re-derive one host's parent under the extended (causality) rule by brute
/// force over the full ground-truth connection log, independently of the
/// agents, windows, and protocol machinery:
///
/// - keep connections into `victim` that arrived by the detection instant
///   and were initiated inside the frozen window;
/// - fold them into per-source candidates with the earliest initiation time;
/// - a source counts as "would reply yes" exactly when its true infection
///   time is at or before the moment the query reaches it (one link delay
///   after the broadcast);
/// - among yes-sources whose connection was initiated at or after their own
///   infection, pick the earliest initiation, breaking ties by host id.
pub fn oracle_parent_extended(
    truth: &GroundTruth,
    outbreak: &OutbreakInfo,
    link_delay_ms: SimTime,
    window_ms: SimTime,
    victim: HostId,
) -> Option<HostId> {
    let query_arrival = outbreak.broadcast_time + link_delay_ms;
    let earliest_init = outbreak.broadcast_time.saturating_sub(window_ms);

    let mut t_conn: std::collections::BTreeMap<HostId, SimTime> = std::collections::BTreeMap::new();
    for rec in &truth.connections {
        if rec.dst != victim {
            continue;
        }
        let arrived = rec.t_init + link_delay_ms;
        if arrived > outbreak.trigger_time || rec.t_init < earliest_init {
            continue;
        }
        let entry = t_conn.entry(rec.src).or_insert(rec.t_init);
        if rec.t_init < *entry {
            *entry = rec.t_init;
        }
    }

    let mut best: Option<(SimTime, HostId)> = None;
    for (&src, &tc) in &t_conn {
        let Some(t_infect) = truth.infection_time(src) else { continue };
        if t_infect > query_arrival {
            continue;
        }
        if tc < t_infect {
            continue;
        }
        if best.is_none_or(|b| (tc, src) < b) {
            best = Some((tc, src));
        }
    }
    best.map(|(_, src)| src)
}

/// A randomized tiny setup: at most ten hosts, a UDP worm with randomized
/// probe gaps, randomized recovery/locality/targeting knobs, and uniform
/// background traffic so never-infected hosts show up as query candidates.
pub fn random_tiny_config(seed: u64) -> ExperimentConfig {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ExperimentConfig::default();

    let host_count = r.random_range(4..=10u32);
    let subnet_count = r.random_range(1..=2u32);
    let spare_slots = r.random_range(0..=2u32);
    cfg.topology.host_count = host_count;
    cfg.topology.subnet_count = subnet_count;
    cfg.topology.slots_per_subnet =
        (host_count.div_ceil(subnet_count) + spare_slots).max(2) as u16;
    cfg.topology.vulnerable_count = r.random_range(2..=host_count);
    cfg.topology.link_delay_ms = 1;

    cfg.worm.name = format!("tiny-{seed}");
    let lo = r.random_range(4..=6u64);
    let hi = r.random_range(lo..=lo + 4);
    cfg.worm.probe_interval_ms = Some(DistributionSpec::Uniform { lo, hi });
    cfg.worm.scan_strategy =
        if r.random_bool(0.5) { ScanStrategy::UniformRandom } else { ScanStrategy::LocalPreference };
    cfg.worm.recovery_prob_per_ms = *[0.0, 0.0, 1e-4, 1e-3].get(r.random_range(0..4usize)).unwrap();
    cfg.worm.origin_count = r.random_range(1..=2u32.min(cfg.topology.vulnerable_count));
    cfg.worm.skip_infected_targets = r.random_bool(0.5);

    cfg.traffic.flow_rate_per_host = *[0.0, 0.5, 2.0, 5.0].get(r.random_range(0..4usize)).unwrap();
    cfg.traffic.pair_selection = PairSelection::Uniform;

    cfg.experiment.window_ms = r.random_range(30..=3000u64);
    cfg.experiment.outbreak =
        OutbreakTrigger::InfectedFraction(*[0.4, 0.6, 0.9].get(r.random_range(0..3usize)).unwrap());
    cfg.experiment.seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    cfg.experiment.t_end_ms = 30_000;
    cfg.experiment.vulnerable_services = vec![ServiceKind::DnsServer];
    cfg
}
