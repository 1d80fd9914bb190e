//! Network model: three-level host addresses grouped into subnets, host
//! state (susceptible / infected / recovered), connection records, and the
//! ground-truth infection bookkeeping that evaluation compares against.
//!
//! Ground-truth fields (`is_attack`, `succeeded_infection`, infection
//! times) exist only for scoring. Monitor agents are handed a separate,
//! stripped-down view (see [`crate::traceback::WindowRecord`]), so they can
//! never peek at the answers.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;

/// Index of a host in the network's host table.
pub type HostId = u32;

/// Three-level address: class-A byte, class-B byte, and a host field.
/// A subnet is one `(class_a, class_b)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HostAddress {
    pub class_a: u8,
    pub class_b: u8,
    pub host: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Udp,
    Tcp,
}

/// What a host is for, from the traffic generator's point of view.
/// Vulnerable hosts are always servers; clients only initiate flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    HttpServer,
    HttpsServer,
    DnsServer,
    SshServer,
    FtpServer,
    EmailServer,
    Client,
}

/// SIR state. Transitions only ever move forward:
/// susceptible -> infected -> recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum HostState {
    Susceptible,
    Infected { t_infect: SimTime },
    Recovered { t_infect: SimTime, t_recover: SimTime },
}

impl HostState {
    pub fn is_susceptible(&self) -> bool {
        matches!(self, HostState::Susceptible)
    }

    pub fn is_infected(&self) -> bool {
        matches!(self, HostState::Infected { .. })
    }

    /// Infection time, kept through recovery.
    pub fn infection_time(&self) -> Option<SimTime> {
        match *self {
            HostState::Susceptible => None,
            HostState::Infected { t_infect } => Some(t_infect),
            HostState::Recovered { t_infect, .. } => Some(t_infect),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    pub addr: HostAddress,
    pub vulnerable: bool,
    pub service: ServiceKind,
    pub state: HostState,
}

impl Host {
    /// susceptible -> infected. Caller must have checked susceptibility.
    pub fn infect(&mut self, t_infect: SimTime) {
        assert!(self.state.is_susceptible(), "host {} infected twice", self.id);
        self.state = HostState::Infected { t_infect };
    }

    /// infected -> recovered.
    pub fn recover(&mut self, t_recover: SimTime) {
        match self.state {
            HostState::Infected { t_infect } => {
                assert!(t_recover > t_infect, "recovery must follow infection");
                self.state = HostState::Recovered { t_infect, t_recover };
            }
            _ => panic!("host {} recovered while not infected", self.id),
        }
    }
}

/// One delivered connection, as recorded in the ground-truth log. `t_init`
/// is the moment the source initiated it; it reaches the destination one
/// link delay later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    pub src: HostId,
    pub dst: HostId,
    pub protocol: Protocol,
    pub t_init: SimTime,
    /// Ground truth: worm traffic, as opposed to background flows.
    pub is_attack: bool,
    /// Ground truth: this very connection caused `dst`'s infection.
    pub succeeded_infection: bool,
}

/// A ground-truth parent edge: `parent` infected `child` with a connection
/// initiated at `t_init`; the infection landed at `t_infect`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfectionEdge {
    pub parent: HostId,
    pub child: HostId,
    pub t_init: SimTime,
    pub t_infect: SimTime,
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Shape of the simulated network, read from the `[topology]` config table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub host_count: u32,
    pub subnet_count: u32,
    /// Address slots per subnet. The worm scans the full slot range, so
    /// slots without a host are wasted probes.
    pub slots_per_subnet: u16,
    pub vulnerable_count: u32,
    pub link_delay_ms: SimTime,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            host_count: 200,
            subnet_count: 4,
            slots_per_subnet: 64,
            vulnerable_count: 30,
            link_delay_ms: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("{vulnerable} vulnerable hosts requested but only {hosts} hosts exist")]
    TooManyVulnerable { vulnerable: u32, hosts: u32 },
    #[error("{hosts} hosts do not fit in {subnets} subnets of {slots} slots")]
    NotEnoughSlots { hosts: u32, subnets: u32, slots: u16 },
    #[error("topology needs at least one subnet and one slot")]
    EmptySpace,
    #[error("link delay must be at least 1 ms")]
    ZeroLinkDelay,
}

/// One scannable subnet: a `(class_a, class_b)` pair with `slots` addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subnet {
    pub class_a: u8,
    pub class_b: u8,
    pub slots: u16,
}

/// The address space a worm scans over: the union of all subnet slot
/// ranges. Uniform selection is uniform over individual addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressSpace {
    subnets: Vec<Subnet>,
    /// Cumulative slot counts, for weighted subnet selection.
    offsets: Vec<u32>,
    total: u32,
}

impl AddressSpace {
    pub fn new(subnets: Vec<Subnet>) -> Self {
        let mut offsets = Vec::with_capacity(subnets.len());
        let mut total = 0u32;
        for s in &subnets {
            offsets.push(total);
            total += u32::from(s.slots);
        }
        AddressSpace { subnets, offsets, total }
    }

    pub fn subnets(&self) -> &[Subnet] {
        &self.subnets
    }

    /// Number of distinct addresses in the space.
    pub fn size(&self) -> u32 {
        self.total
    }

    pub fn address_at(&self, index: u32) -> HostAddress {
        debug_assert!(index < self.total);
        // Last subnet whose offset is <= index.
        let i = match self.offsets.binary_search(&index) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let s = self.subnets[i];
        HostAddress { class_a: s.class_a, class_b: s.class_b, host: (index - self.offsets[i]) as u16 }
    }

    /// Indexes of subnets sharing `class_a`.
    pub fn subnets_in_class_a(&self, class_a: u8) -> Vec<usize> {
        self.subnets
            .iter()
            .enumerate()
            .filter(|(_, s)| s.class_a == class_a)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subnet_index_of(&self, addr: HostAddress) -> Option<usize> {
        self.subnets
            .iter()
            .position(|s| s.class_a == addr.class_a && s.class_b == addr.class_b)
    }
}

fn generated_subnets(count: u32, slots: u16) -> Vec<Subnet> {
    // Two subnets per class-A byte so "same class A" and "same class B"
    // are distinct localities, mirroring a small multi-site network.
    (0..count)
        .map(|i| Subnet {
            class_a: 10 + (i / 2) as u8,
            class_b: 1 + (i % 2) as u8,
            slots,
        })
        .collect()
}

/// Non-vulnerable hosts cycle through this pattern, giving roughly three
/// quarters clients with a sprinkling of ordinary (non-vulnerable) servers
/// for every traffic service.
const FILLER_SERVICES: [ServiceKind; 8] = [
    ServiceKind::Client,
    ServiceKind::Client,
    ServiceKind::DnsServer,
    ServiceKind::Client,
    ServiceKind::SshServer,
    ServiceKind::Client,
    ServiceKind::FtpServer,
    ServiceKind::EmailServer,
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub hosts: Vec<Host>,
    pub space: AddressSpace,
    pub link_delay: SimTime,
    index: HashMap<HostAddress, HostId>,
}

impl Network {
    /// Build a network from `config`. Hosts are dealt round-robin across
    /// subnets (host i sits in subnet `i % subnet_count`), which keeps the
    /// address layout deterministic; the RNG only picks which hosts are
    /// vulnerable. Vulnerable hosts run the services in
    /// `vulnerable_services`, cycling when there are more hosts than labels.
    pub fn build(
        config: &TopologyConfig,
        vulnerable_services: &[ServiceKind],
        rng: &mut ChaCha8Rng,
    ) -> Result<Network, TopologyError> {
        if config.subnet_count == 0 || config.slots_per_subnet == 0 || config.host_count == 0 {
            return Err(TopologyError::EmptySpace);
        }
        if config.link_delay_ms == 0 {
            return Err(TopologyError::ZeroLinkDelay);
        }
        if config.vulnerable_count > config.host_count {
            return Err(TopologyError::TooManyVulnerable {
                vulnerable: config.vulnerable_count,
                hosts: config.host_count,
            });
        }
        let capacity = config.subnet_count * u32::from(config.slots_per_subnet);
        if config.host_count > capacity {
            return Err(TopologyError::NotEnoughSlots {
                hosts: config.host_count,
                subnets: config.subnet_count,
                slots: config.slots_per_subnet,
            });
        }

        let space = AddressSpace::new(generated_subnets(config.subnet_count, config.slots_per_subnet));

        let mut vulnerable = vec![false; config.host_count as usize];
        for i in sample(rng, config.host_count as usize, config.vulnerable_count as usize) {
            vulnerable[i] = true;
        }

        let mut hosts = Vec::with_capacity(config.host_count as usize);
        let mut index = HashMap::new();
        let mut vuln_seen = 0usize;
        let mut filler_seen = 0usize;
        for id in 0..config.host_count {
            let subnet = space.subnets()[(id % config.subnet_count) as usize];
            let slot = (id / config.subnet_count) as u16;
            let addr = HostAddress { class_a: subnet.class_a, class_b: subnet.class_b, host: slot };
            let service = if vulnerable[id as usize] {
                let s = vulnerable_services[vuln_seen % vulnerable_services.len()];
                vuln_seen += 1;
                s
            } else {
                let s = FILLER_SERVICES[filler_seen % FILLER_SERVICES.len()];
                filler_seen += 1;
                s
            };
            index.insert(addr, id);
            hosts.push(Host {
                id,
                addr,
                vulnerable: vulnerable[id as usize],
                service,
                state: HostState::Susceptible,
            });
        }

        Ok(Network { hosts, space, link_delay: config.link_delay_ms, index })
    }

    pub fn resolve(&self, addr: HostAddress) -> Option<HostId> {
        self.index.get(&addr).copied()
    }

    pub fn host(&self, id: HostId) -> &Host {
        &self.hosts[id as usize]
    }

    pub fn host_mut(&mut self, id: HostId) -> &mut Host {
        &mut self.hosts[id as usize]
    }

    /// When a connection initiated at `t_init` reaches its destination.
    pub fn arrival_time(&self, t_init: SimTime) -> SimTime {
        t_init + self.link_delay
    }

    pub fn vulnerable_ids(&self) -> Vec<HostId> {
        self.hosts.iter().filter(|h| h.vulnerable).map(|h| h.id).collect()
    }

    pub fn infected_count(&self) -> u32 {
        self.hosts.iter().filter(|h| h.state.infection_time().is_some()).count() as u32
    }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Everything the evaluator may see and the agents may not: the full
/// connection log, true infection times, and the real parent edges.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub connections: Vec<ConnectionRecord>,
    pub edges: Vec<InfectionEdge>,
    /// `(host, t_infect)` for every infection, origins included.
    pub infections: Vec<(HostId, SimTime)>,
    pub recoveries: Vec<(HostId, SimTime)>,
}

impl GroundTruth {
    pub fn infection_time(&self, host: HostId) -> Option<SimTime> {
        self.infections.iter().find(|(h, _)| *h == host).map(|(_, t)| *t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn default_net(seed: u64) -> Network {
        Network::build(&TopologyConfig::default(), &[ServiceKind::HttpServer], &mut rng(seed)).unwrap()
    }

    #[test]
    fn default_topology_has_expected_shape() {
        let net = default_net(1);
        assert_eq!(net.hosts.len(), 200);
        assert_eq!(net.hosts.iter().filter(|h| h.vulnerable).count(), 30);
        assert_eq!(net.space.subnets().len(), 4);
        assert_eq!(net.space.size(), 4 * 64);
        assert_eq!(net.link_delay, 1);
        // Round-robin dealing: consecutive ids land in consecutive subnets.
        assert_eq!(net.hosts[0].addr, HostAddress { class_a: 10, class_b: 1, host: 0 });
        assert_eq!(net.hosts[1].addr, HostAddress { class_a: 10, class_b: 2, host: 0 });
        assert_eq!(net.hosts[4].addr, HostAddress { class_a: 10, class_b: 1, host: 1 });
    }

    #[test]
    fn twenty_eight_vulnerable_http_servers() {
        let cfg = TopologyConfig { vulnerable_count: 28, ..TopologyConfig::default() };
        let net = Network::build(&cfg, &[ServiceKind::HttpServer], &mut rng(2)).unwrap();
        let vuln: Vec<&Host> = net.hosts.iter().filter(|h| h.vulnerable).collect();
        assert_eq!(vuln.len(), 28);
        assert!(vuln.iter().all(|h| h.service == ServiceKind::HttpServer));
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = default_net(7);
        let b = default_net(7);
        let ids_a: Vec<HostId> = a.vulnerable_ids();
        assert_eq!(ids_a, b.vulnerable_ids());
        let c = default_net(8);
        assert_ne!(ids_a, c.vulnerable_ids());
    }

    #[test]
    fn more_vulnerable_than_hosts_is_rejected() {
        let cfg = TopologyConfig { host_count: 1, vulnerable_count: 2, ..TopologyConfig::default() };
        let err = Network::build(&cfg, &[ServiceKind::HttpServer], &mut rng(1)).err().unwrap();
        assert_eq!(err, TopologyError::TooManyVulnerable { vulnerable: 2, hosts: 1 });
    }

    #[test]
    fn overfull_subnets_are_rejected() {
        let cfg = TopologyConfig {
            host_count: 300,
            subnet_count: 2,
            slots_per_subnet: 100,
            vulnerable_count: 10,
            ..TopologyConfig::default()
        };
        assert!(matches!(
            Network::build(&cfg, &[ServiceKind::HttpServer], &mut rng(1)),
            Err(TopologyError::NotEnoughSlots { .. })
        ));
    }

    #[test]
    fn hosts_in_same_subnet_share_class_a_prefix() {
        let net = default_net(3);
        for a in &net.hosts {
            for b in &net.hosts {
                let same_b = a.addr.class_a == b.addr.class_a && a.addr.class_b == b.addr.class_b;
                if same_b {
                    assert_eq!(a.addr.class_a, b.addr.class_a);
                }
            }
        }
        // And the generated layout really does reuse class-B bytes across
        // different class-A values, so the two localities differ.
        let net4 = &net.space.subnets();
        assert!(net4.iter().any(|s| s.class_a != net4[0].class_a));
    }

    #[test]
    fn resolve_roundtrips_every_host_and_misses_empty_slots() {
        let net = default_net(4);
        for h in &net.hosts {
            assert_eq!(net.resolve(h.addr), Some(h.id));
        }
        // 200 hosts in 256 slots: find an unoccupied address.
        let empty = HostAddress { class_a: 10, class_b: 1, host: 63 };
        assert_eq!(net.resolve(empty), None);
    }

    #[test]
    fn address_space_indexing_covers_all_subnets() {
        let space = AddressSpace::new(vec![
            Subnet { class_a: 1, class_b: 1, slots: 2 },
            Subnet { class_a: 1, class_b: 2, slots: 3 },
        ]);
        assert_eq!(space.size(), 5);
        assert_eq!(space.address_at(0), HostAddress { class_a: 1, class_b: 1, host: 0 });
        assert_eq!(space.address_at(1), HostAddress { class_a: 1, class_b: 1, host: 1 });
        assert_eq!(space.address_at(2), HostAddress { class_a: 1, class_b: 2, host: 0 });
        assert_eq!(space.address_at(4), HostAddress { class_a: 1, class_b: 2, host: 2 });
    }

    #[test]
    fn state_machine_moves_forward_only() {
        let mut host = Host {
            id: 5,
            addr: HostAddress { class_a: 1, class_b: 1, host: 0 },
            vulnerable: true,
            service: ServiceKind::HttpServer,
            state: HostState::Susceptible,
        };
        assert_eq!(host.state.infection_time(), None);
        host.infect(120);
        assert!(host.state.is_infected());
        assert_eq!(host.state.infection_time(), Some(120));
        host.recover(900);
        assert_eq!(host.state, HostState::Recovered { t_infect: 120, t_recover: 900 });
        // Infection time survives recovery.
        assert_eq!(host.state.infection_time(), Some(120));
    }

    #[test]
    #[should_panic(expected = "infected twice")]
    fn double_infection_panics() {
        let mut host = Host {
            id: 0,
            addr: HostAddress { class_a: 1, class_b: 1, host: 0 },
            vulnerable: true,
            service: ServiceKind::HttpServer,
            state: HostState::Infected { t_infect: 10 },
        };
        host.infect(20);
    }
}
