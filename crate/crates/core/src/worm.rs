//! Worm behaviour: how scan targets are chosen, how fast probes are fired,
//! and when infected hosts recover. The event-driven scanning loop itself
//! lives in [`crate::sim`]; this module holds the parameterisation and the
//! pure sampling helpers so they can be tested in isolation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{DistributionSpec, SimTime};
use crate::network::{AddressSpace, HostAddress, Network, Protocol};

/// How an infected host picks addresses to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStrategy {
    /// Every address in the space is equally likely.
    UniformRandom,
    /// Mix of global and locality-biased draws, see [`LocalPrefProbs`].
    LocalPreference,
}

/// Branch weights for local-preference scanning. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPrefProbs {
    pub p_random: f64,
    pub p_class_a: f64,
    pub p_class_b: f64,
}

impl Default for LocalPrefProbs {
    fn default() -> Self {
        // 1/8 anywhere, 4/8 own class A, 3/8 own class B.
        LocalPrefProbs { p_random: 0.125, p_class_a: 0.5, p_class_b: 0.375 }
    }
}

/// Which locality a single local-preference draw landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalityBranch {
    Random,
    SameClassA,
    SameClassB,
}

/// Worm parameterisation, read from the `[worm]` config table.
///
/// Exactly one of `probe_interval_ms` (UDP) or `concurrent_connections`
/// (TCP) must be set, matching the transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WormConfig {
    pub name: String,
    pub transport: Protocol,
    /// UDP: gap between consecutive probes from one host.
    ///
    /// TOML has no null, so absent optional fields must stay `None` on
    /// re-parse instead of inheriting the struct default's UDP interval.
    #[serde(default)]
    pub probe_interval_ms: Option<DistributionSpec>,
    /// TCP: connection attempts kept in flight per infected host.
    #[serde(default)]
    pub concurrent_connections: Option<u32>,
    /// TCP: how long an attempt to a dead address occupies its slot.
    pub tcp_timeout_ms: SimTime,
    /// TCP: how long a successful handshake occupies its slot. Defaults to
    /// three link delays when unset.
    #[serde(default)]
    pub tcp_handshake_ms: Option<SimTime>,
    pub scan_strategy: ScanStrategy,
    pub local_pref: LocalPrefProbs,
    /// Per-millisecond recovery probability; dwell time is geometric.
    pub recovery_prob_per_ms: f64,
    /// How many origins start infected at t = 0.
    pub origin_count: u32,
    /// Explicit origin hosts; overrides `origin_count` when non-empty.
    /// Every listed host must be vulnerable.
    pub origin_hosts: Vec<u32>,
    /// Redraw targets that are already infected (or recovered) instead of
    /// re-attacking them. Keeps unsuccessful-attack noise out of generated
    /// traces; in-flight races still produce the occasional one.
    pub skip_infected_targets: bool,
}

impl Default for WormConfig {
    fn default() -> Self {
        WormConfig {
            name: "worm".to_string(),
            transport: Protocol::Udp,
            probe_interval_ms: Some(DistributionSpec::Uniform { lo: 4, hi: 8 }),
            concurrent_connections: None,
            tcp_timeout_ms: 500,
            tcp_handshake_ms: None,
            scan_strategy: ScanStrategy::UniformRandom,
            local_pref: LocalPrefProbs::default(),
            recovery_prob_per_ms: 1e-4,
            origin_count: 1,
            origin_hosts: Vec::new(),
            skip_infected_targets: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WormConfigError {
    #[error("UDP worm needs probe_interval_ms and no concurrent_connections")]
    UdpParams,
    #[error("TCP worm needs concurrent_connections (>= 1) and no probe_interval_ms")]
    TcpParams,
    #[error("local preference probabilities sum to {0}, expected 1")]
    ProbsSum(f64),
    #[error("local preference probabilities must be non-negative")]
    NegativeProb,
    #[error("recovery probability {0} outside [0, 1]")]
    BadRecoveryProb(f64),
    #[error("worm needs at least one origin")]
    NoOrigins,
    #[error("{requested} origins requested but only {vulnerable} vulnerable hosts exist")]
    TooManyOrigins { requested: u32, vulnerable: u32 },
    #[error("origin host {0} is not vulnerable")]
    OriginNotVulnerable(u32),
    #[error(transparent)]
    BadDistribution(#[from] crate::engine::DistributionError),
}

impl WormConfig {
    pub fn validate(&self) -> Result<(), WormConfigError> {
        match self.transport {
            Protocol::Udp => {
                if self.probe_interval_ms.is_none() || self.concurrent_connections.is_some() {
                    return Err(WormConfigError::UdpParams);
                }
            }
            Protocol::Tcp => {
                if self.concurrent_connections.is_none_or(|c| c == 0)
                    || self.probe_interval_ms.is_some()
                {
                    return Err(WormConfigError::TcpParams);
                }
            }
        }
        if let Some(dist) = self.probe_interval_ms {
            dist.validate()?;
        }
        let p = self.local_pref;
        if p.p_random < 0.0 || p.p_class_a < 0.0 || p.p_class_b < 0.0 {
            return Err(WormConfigError::NegativeProb);
        }
        let sum = p.p_random + p.p_class_a + p.p_class_b;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WormConfigError::ProbsSum(sum));
        }
        if !(0.0..=1.0).contains(&self.recovery_prob_per_ms) || self.recovery_prob_per_ms.is_nan() {
            return Err(WormConfigError::BadRecoveryProb(self.recovery_prob_per_ms));
        }
        if self.origin_hosts.is_empty() && self.origin_count == 0 {
            return Err(WormConfigError::NoOrigins);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Target selection
// ---------------------------------------------------------------------------

/// Uniform draw over every address in the space, occupied or not.
pub fn select_target_uniform(rng: &mut ChaCha8Rng, space: &AddressSpace) -> HostAddress {
    debug_assert!(space.size() > 0);
    let idx = rng.random_range(0..space.size());
    space.address_at(idx)
}

/// Pick which locality branch a local-preference draw uses.
pub fn choose_branch(rng: &mut ChaCha8Rng, probs: LocalPrefProbs) -> LocalityBranch {
    let r: f64 = rng.random();
    if r < probs.p_random {
        LocalityBranch::Random
    } else if r < probs.p_random + probs.p_class_a {
        LocalityBranch::SameClassA
    } else {
        LocalityBranch::SameClassB
    }
}

/// Local-preference draw: anywhere, within the scanner's class A, or within
/// the scanner's own `(class A, class B)` subnet, per the branch weights.
pub fn select_target_local_pref(
    rng: &mut ChaCha8Rng,
    space: &AddressSpace,
    own: HostAddress,
    probs: LocalPrefProbs,
) -> HostAddress {
    match choose_branch(rng, probs) {
        LocalityBranch::Random => select_target_uniform(rng, space),
        LocalityBranch::SameClassA => {
            let candidates = space.subnets_in_class_a(own.class_a);
            debug_assert!(!candidates.is_empty(), "scanner's own class A must be in the space");
            let total: u32 = candidates.iter().map(|&i| u32::from(space.subnets()[i].slots)).sum();
            let mut pick = rng.random_range(0..total);
            for &i in &candidates {
                let s = space.subnets()[i];
                if pick < u32::from(s.slots) {
                    return HostAddress { class_a: s.class_a, class_b: s.class_b, host: pick as u16 };
                }
                pick -= u32::from(s.slots);
            }
            unreachable!("pick is bounded by the summed slot count")
        }
        LocalityBranch::SameClassB => {
            let idx = space.subnet_index_of(own).expect("scanner's subnet must be in the space");
            let s = space.subnets()[idx];
            HostAddress { class_a: s.class_a, class_b: s.class_b, host: rng.random_range(0..s.slots) }
        }
    }
}

/// Outcome of drawing one probe target for `scanner`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    /// Address has no host behind it; the probe is wasted on the wire.
    Empty(HostAddress),
    /// A real host.
    Host(u32),
    /// The scanner drew itself; the probe is discarded (src != dst).
    SelfAddress,
}

const SKIP_REDRAW_LIMIT: u32 = 32;

/// Draw a probe target by the configured strategy. With
/// `skip_infected_targets` set, draws landing on hosts that are already
/// infected or recovered are redrawn (bounded), so the worm concentrates on
/// untouched addresses.
pub fn pick_probe_target(
    cfg: &WormConfig,
    net: &Network,
    scanner: u32,
    rng: &mut ChaCha8Rng,
) -> ProbeTarget {
    let own = net.host(scanner).addr;
    let mut last = None;
    for _ in 0..SKIP_REDRAW_LIMIT {
        let addr = match cfg.scan_strategy {
            ScanStrategy::UniformRandom => select_target_uniform(rng, &net.space),
            ScanStrategy::LocalPreference => {
                select_target_local_pref(rng, &net.space, own, cfg.local_pref)
            }
        };
        match net.resolve(addr) {
            None => return ProbeTarget::Empty(addr),
            Some(id) => {
                let touched = net.host(id).state.infection_time().is_some();
                if cfg.skip_infected_targets && touched {
                    // Covers the scanner itself too: a scanner is infected
                    // by definition while it is scanning.
                    last = Some(id);
                    continue;
                }
                if id == scanner {
                    return ProbeTarget::SelfAddress;
                }
                return ProbeTarget::Host(id);
            }
        }
    }
    // Redraws exhausted (the space is almost fully infected): fall back to
    // the last draw rather than spinning.
    match last {
        Some(id) if id == scanner => ProbeTarget::SelfAddress,
        Some(id) => ProbeTarget::Host(id),
        None => unreachable!("redraws only repeat on resolved hosts"),
    }
}

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

/// Sample how long a freshly infected host stays infected: a geometric
/// number of 1 ms trials at `prob_per_ms`, so the mean dwell is `1/p` ms.
/// Sampled once at infection time. `None` means the host never recovers.
pub fn sample_recovery_dwell(rng: &mut ChaCha8Rng, prob_per_ms: f64) -> Option<SimTime> {
    if prob_per_ms <= 0.0 {
        return None;
    }
    if prob_per_ms >= 1.0 {
        // Recovers at the first tick after infection.
        return Some(1);
    }
    let failures = Geometric::new(prob_per_ms).expect("validated probability").sample(rng);
    Some(failures + 1)
}
