//! The simulation proper: wires worm scanning, background traffic, monitor
//! agents, and the outbreak query/reply protocol onto the deterministic
//! event engine.
//!
//! A run produces three things: an ordered event trace (every processed
//! event), the ground truth (connections, infection edges, recoveries), and
//! — when the outbreak protocol completes — a reconstruction of the
//! propagation forest under both parent-election rules.
//!
//! Timing model, all integer milliseconds:
//! * a connection initiated at `t` reaches its destination at `t + link_delay`;
//! * an infecting connection infects at arrival, i.e. `t_init + link_delay`;
//! * a TCP connection slot is busy for `3 * link_delay` against a live host
//!   (handshake round trip) and `tcp_timeout_ms` against an empty address;
//! * the outbreak broadcast goes out one millisecond after the trigger
//!   condition is met; queries travel one link delay, replies another.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EventLog, Handler, Seed, SimTime};
use crate::network::{
    ConnectionRecord, GroundTruth, HostId, HostState, InfectionEdge, Network, Protocol,
};
use crate::traceback::{
    answer_query, AgentMode, GraphKind, MonitorAgent, PropagationGraph, Reply, WindowRecord,
};
use crate::traffic::{
    pick_destination, sample_flow_gap_ms, ServiceLabel, TrafficConfig, TrafficConfigError,
};
use crate::worm::{
    pick_probe_target, sample_recovery_dwell, ProbeTarget, WormConfig, WormConfigError,
};

/// Everything that can happen, exactly as it appears in the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Event {
    /// An infected host starts one probe: a UDP datagram, or a TCP slot
    /// coming free and beginning its next connection attempt.
    ProbeSend { src: HostId },
    /// A connection (attack or background flow) reaches its destination.
    /// `is_attack` is ground-truth annotation for analysis; the monitor on
    /// the receiving host never reads it.
    ConnectionArrive {
        src: HostId,
        dst: HostId,
        protocol: Protocol,
        t_init: SimTime,
        #[serde(default)]
        is_attack: bool,
    },
    /// Marker that `host` became infected at this instant; scan chains and
    /// the recovery clock start here.
    InfectionComplete { host: HostId, parent: Option<HostId> },
    /// The host's sampled infection dwell has elapsed; it recovers.
    RecoveryCheck { host: HostId },
    /// A background-traffic emitter wakes up and sends one flow.
    NormalTraffic { src: HostId },
    /// The outbreak broadcast: every monitor freezes its window.
    OutbreakDetected { trigger_time: SimTime },
    /// A trace-back query arriving at the queried host. A self-addressed
    /// query (`from == to`) is a participant beacon: it announces that the
    /// sender takes part in trace-back without asking anything.
    QuerySend { from: HostId, to: HostId },
    /// A query answer arriving back at the querier.
    ReplyArrive { from: HostId, to: HostId, reply: Reply },
}

/// When the outbreak broadcast fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutbreakTrigger {
    /// Fire when this fraction of the vulnerable population has been
    /// infected (cumulative, recovered hosts count).
    InfectedFraction(f64),
    /// Fire unconditionally at this instant.
    AtTime(SimTime),
}

/// Run-level knobs that are not part of the worm, traffic, or topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub window_ms: SimTime,
    pub trigger: OutbreakTrigger,
    /// Parent candidates must have connected strictly after their own
    /// infection instead of at-or-after.
    pub strict_causality: bool,
    pub t_end_ms: SimTime,
    pub seed: Seed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutbreakInfo {
    pub trigger_time: SimTime,
    pub broadcast_time: SimTime,
    /// Hosts whose infection predates the trigger instant; exactly the
    /// trace-back participants.
    pub infected_at_trigger: u32,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Worm(#[from] WormConfigError),
    #[error(transparent)]
    Traffic(#[from] TrafficConfigError),
    #[error("no origin hosts resolved")]
    NoOrigins,
    #[error("origin host {0} does not exist")]
    NoSuchOrigin(HostId),
    #[error("origin host {0} is not vulnerable")]
    OriginNotVulnerable(HostId),
    #[error("origin host {0} listed twice")]
    DuplicateOrigin(HostId),
    #[error("outbreak fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("window must be at least 1 ms")]
    ZeroWindow,
    #[error("simulation horizon must be at least 1 ms")]
    ZeroHorizon,
    #[error("TCP slot timings must be at least 1 ms")]
    ZeroTcpTiming,
}

/// Map a background-flow service onto a transport.
fn flow_protocol(label: ServiceLabel) -> Protocol {
    match label {
        ServiceLabel::Dns | ServiceLabel::Ping => Protocol::Udp,
        _ => Protocol::Tcp,
    }
}

// ---------------------------------------------------------------------------
// World state and event handling
// ---------------------------------------------------------------------------

struct World {
    net: Network,
    worm: WormConfig,
    traffic: TrafficConfig,
    agents: Vec<MonitorAgent>,
    truth: GroundTruth,
    outbreak: Option<OutbreakInfo>,
    /// Instant by which the whole query/reply wave has landed; set when the
    /// broadcast fires. The run processes events up to this time and stops.
    protocol_end: Option<SimTime>,
    strict: bool,
    trigger_threshold: usize,
    triggered: bool,
    unresolved: usize,
    tcp_handshake_ms: SimTime,
    attack_in_flight: Vec<u32>,
    max_attack_in_flight: Vec<u32>,
}

impl World {
    fn send_connection(
        &mut self,
        engine: &mut Engine<Event>,
        now: SimTime,
        src: HostId,
        dst: HostId,
        protocol: Protocol,
        is_attack: bool,
    ) {
        if is_attack {
            let idx = src as usize;
            self.attack_in_flight[idx] += 1;
            self.max_attack_in_flight[idx] =
                self.max_attack_in_flight[idx].max(self.attack_in_flight[idx]);
        }
        engine
            .schedule(
                self.net.arrival_time(now),
                Event::ConnectionArrive { src, dst, protocol, t_init: now, is_attack },
            )
            .expect("arrivals are scheduled forward");
    }

    fn sample_probe_gap(&self, engine: &mut Engine<Event>) -> SimTime {
        let spec = self.worm.probe_interval_ms.expect("validated: UDP worm has an interval");
        (engine.rng_draw(spec) as SimTime).max(1)
    }

    /// One probe: draw a target, launch the connection if a host is behind
    /// it, and keep the chain going (UDP: next probe one gap later; TCP:
    /// the slot frees after the handshake or the dead-address timeout).
    fn handle_probe(&mut self, engine: &mut Engine<Event>, now: SimTime, src: HostId) {
        if !matches!(self.net.host(src).state, HostState::Infected { .. }) {
            return; // recovered: this scan chain dies
        }
        let target = pick_probe_target(&self.worm, &self.net, src, engine.rng());
        match self.worm.transport {
            Protocol::Udp => {
                if let ProbeTarget::Host(dst) = target {
                    self.send_connection(engine, now, src, dst, Protocol::Udp, true);
                }
                let gap = self.sample_probe_gap(engine);
                engine.schedule(now + gap, Event::ProbeSend { src }).expect("forward");
            }
            Protocol::Tcp => {
                let slot_free_at = match target {
                    ProbeTarget::Host(dst) => {
                        self.send_connection(engine, now, src, dst, Protocol::Tcp, true);
                        now + self.tcp_handshake_ms
                    }
                    // Nobody answers the SYN: the slot waits out the timeout.
                    ProbeTarget::Empty(_) => now + self.worm.tcp_timeout_ms,
                    // Drew itself: a wasted cycle.
                    ProbeTarget::SelfAddress => now + self.tcp_handshake_ms,
                };
                engine.schedule(slot_free_at, Event::ProbeSend { src }).expect("forward");
            }
        }
    }

    #[allow(clippy::too_many_arguments)] // mirrors the connection event payload
    fn handle_arrival(
        &mut self,
        engine: &mut Engine<Event>,
        now: SimTime,
        src: HostId,
        dst: HostId,
        protocol: Protocol,
        t_init: SimTime,
        is_attack: bool,
    ) {
        if is_attack {
            self.attack_in_flight[src as usize] -= 1;
        }
        // The monitor sees the header only; a frozen monitor ignores it.
        self.agents[dst as usize].record_incoming(WindowRecord {
            src,
            protocol,
            t_init,
            arrived: now,
        });
        let mut succeeded = false;
        if is_attack {
            let host = self.net.host(dst);
            if host.vulnerable && host.state.is_susceptible() {
                succeeded = true;
                self.net.host_mut(dst).infect(now);
                self.truth.infections.push((dst, now));
                self.truth.edges.push(InfectionEdge {
                    parent: src,
                    child: dst,
                    t_init,
                    t_infect: now,
                });
                engine
                    .schedule(now, Event::InfectionComplete { host: dst, parent: Some(src) })
                    .expect("same-instant marker");
                self.check_trigger(engine, now);
            }
        }
        self.truth.connections.push(ConnectionRecord {
            src,
            dst,
            protocol,
            t_init,
            is_attack,
            succeeded_infection: succeeded,
        });
    }

    /// Start the worm machinery on a freshly infected host: its recovery
    /// clock, plus one UDP probe chain or one chain per TCP slot.
    fn handle_infection_complete(
        &mut self,
        engine: &mut Engine<Event>,
        now: SimTime,
        host: HostId,
    ) {
        if let Some(dwell) = sample_recovery_dwell(engine.rng(), self.worm.recovery_prob_per_ms) {
            engine.schedule(now + dwell, Event::RecoveryCheck { host }).expect("forward");
        }
        match self.worm.transport {
            Protocol::Udp => {
                let gap = self.sample_probe_gap(engine);
                engine.schedule(now + gap, Event::ProbeSend { src: host }).expect("forward");
            }
            Protocol::Tcp => {
                let slots = self.worm.concurrent_connections.expect("validated: TCP has slots");
                for _ in 0..slots {
                    engine.schedule(now, Event::ProbeSend { src: host }).expect("same instant");
                }
            }
        }
    }

    fn handle_recovery(&mut self, now: SimTime, host: HostId) {
        if matches!(self.net.host(host).state, HostState::Infected { .. }) {
            self.net.host_mut(host).recover(now);
            self.truth.recoveries.push((host, now));
        }
    }

    fn handle_traffic(&mut self, engine: &mut Engine<Event>, now: SimTime, src: HostId) {
        let label = self.traffic.draw_service(engine.rng());
        if let Some(dst) =
            pick_destination(engine.rng(), &self.net, src, label, self.traffic.pair_selection)
        {
            self.send_connection(engine, now, src, dst, flow_protocol(label), false);
        }
        let gap = sample_flow_gap_ms(engine.rng(), self.traffic.flow_rate_per_host);
        engine.schedule(now + gap, Event::NormalTraffic { src }).expect("forward");
    }

    fn check_trigger(&mut self, engine: &mut Engine<Event>, now: SimTime) {
        if self.triggered || self.truth.infections.len() < self.trigger_threshold {
            return;
        }
        self.triggered = true;
        engine
            .schedule(now + 1, Event::OutbreakDetected { trigger_time: now })
            .expect("broadcast goes out one tick later");
    }

    fn handle_outbreak(&mut self, engine: &mut Engine<Event>, now: SimTime, trigger_time: SimTime) {
        if self.outbreak.is_some() {
            return;
        }
        let infected_at_trigger =
            self.truth.infections.iter().filter(|(_, t)| *t <= trigger_time).count() as u32;
        self.outbreak = Some(OutbreakInfo { trigger_time, broadcast_time: now, infected_at_trigger });
        let delay = self.net.link_delay;
        self.protocol_end = Some(now + 2 * delay);
        for id in 0..self.agents.len() as HostId {
            let participant = self
                .net
                .host(id)
                .state
                .infection_time()
                .is_some_and(|t| t <= trigger_time);
            let agent = &mut self.agents[id as usize];
            agent.freeze(trigger_time, now);
            let queries = agent.begin_queries(participant, self.strict);
            if participant {
                // Beacon: participants announce themselves even when their
                // window holds nothing to ask about.
                engine
                    .schedule(now + delay, Event::QuerySend { from: id, to: id })
                    .expect("forward");
            }
            for q in queries {
                engine
                    .schedule(now + delay, Event::QuerySend { from: id, to: q })
                    .expect("forward");
            }
        }
        self.unresolved = self.agents.iter().filter(|a| !a.resolved).count();
    }

    fn handle_query(&mut self, engine: &mut Engine<Event>, now: SimTime, from: HostId, to: HostId) {
        if from == to {
            return; // beacon: nothing to answer
        }
        let reply = answer_query(&self.net.host(to).state);
        engine
            .schedule(now + self.net.link_delay, Event::ReplyArrive { from: to, to: from, reply })
            .expect("forward");
    }

    fn handle_reply(&mut self, from: HostId, to: HostId, reply: Reply) {
        let agent = &mut self.agents[to as usize];
        let was_resolved = agent.resolved;
        agent.receive_reply(from, reply, self.strict);
        if !was_resolved && agent.resolved {
            self.unresolved -= 1;
        }
    }
}

impl Handler<Event> for World {
    fn handle(&mut self, engine: &mut Engine<Event>, time: SimTime, event: &Event) {
        match *event {
            Event::ProbeSend { src } => self.handle_probe(engine, time, src),
            Event::ConnectionArrive { src, dst, protocol, t_init, is_attack } => {
                self.handle_arrival(engine, time, src, dst, protocol, t_init, is_attack)
            }
            Event::InfectionComplete { host, .. } => {
                self.handle_infection_complete(engine, time, host)
            }
            Event::RecoveryCheck { host } => self.handle_recovery(time, host),
            Event::NormalTraffic { src } => self.handle_traffic(engine, time, src),
            Event::OutbreakDetected { trigger_time } => {
                self.handle_outbreak(engine, time, trigger_time)
            }
            Event::QuerySend { from, to } => self.handle_query(engine, time, from, to),
            Event::ReplyArrive { from, to, reply } => self.handle_reply(from, to, reply),
        }
    }
}

// ---------------------------------------------------------------------------
// Running a simulation
// ---------------------------------------------------------------------------

/// Everything a finished run hands back.
pub struct SimOutcome {
    pub log: EventLog<Event>,
    pub truth: GroundTruth,
    pub net: Network,
    pub agents: Vec<MonitorAgent>,
    pub outbreak: Option<OutbreakInfo>,
    /// When the last reply landed; `None` when no outbreak fired or the
    /// horizon cut the protocol short.
    pub traceback_completed_ms: Option<SimTime>,
    pub end_clock_ms: SimTime,
    pub reconstruction_origins: Option<PropagationGraph>,
    pub reconstruction_extended: Option<PropagationGraph>,
    /// Peak simultaneous in-flight attack connections per host; bounded by
    /// the TCP slot count.
    pub max_attack_in_flight: Vec<u32>,
}

pub struct Simulation {
    engine: Engine<Event>,
    world: World,
    log: EventLog<Event>,
    t_end_ms: SimTime,
}

impl Simulation {
    /// Set up a run: validate configs, infect the origins at t = 0, start
    /// the background-traffic chains, and arm the outbreak trigger.
    pub fn new(
        mut net: Network,
        origins: &[HostId],
        worm: WormConfig,
        traffic: TrafficConfig,
        params: SimParams,
    ) -> Result<Simulation, SimError> {
        worm.validate()?;
        traffic.validate()?;
        if params.window_ms == 0 {
            return Err(SimError::ZeroWindow);
        }
        if params.t_end_ms == 0 {
            return Err(SimError::ZeroHorizon);
        }
        if let OutbreakTrigger::InfectedFraction(f) = params.trigger {
            if !f.is_finite() || f <= 0.0 || f > 1.0 {
                return Err(SimError::BadFraction(f));
            }
        }
        let tcp_handshake_ms = worm.tcp_handshake_ms.unwrap_or(3 * net.link_delay);
        if worm.transport == Protocol::Tcp
            && (tcp_handshake_ms == 0 || worm.tcp_timeout_ms == 0)
        {
            return Err(SimError::ZeroTcpTiming);
        }
        if origins.is_empty() {
            return Err(SimError::NoOrigins);
        }
        let mut seen = BTreeSet::new();
        for &o in origins {
            if o as usize >= net.hosts.len() {
                return Err(SimError::NoSuchOrigin(o));
            }
            if !net.host(o).vulnerable {
                return Err(SimError::OriginNotVulnerable(o));
            }
            if !seen.insert(o) {
                return Err(SimError::DuplicateOrigin(o));
            }
        }

        let mut engine = Engine::new(params.seed);
        let mut truth =
            GroundTruth { connections: vec![], edges: vec![], infections: vec![], recoveries: vec![] };
        let host_count = net.hosts.len();
        let agents: Vec<MonitorAgent> =
            (0..host_count as HostId).map(|id| MonitorAgent::new(id, params.window_ms)).collect();

        for &o in origins {
            net.host_mut(o).infect(0);
            truth.infections.push((o, 0));
            engine
                .schedule(0, Event::InfectionComplete { host: o, parent: None })
                .expect("initial events");
        }

        if traffic.flow_rate_per_host > 0.0 {
            for id in 0..host_count as HostId {
                if traffic.emits(net.host(id).service) {
                    let gap = sample_flow_gap_ms(engine.rng(), traffic.flow_rate_per_host);
                    engine.schedule(gap, Event::NormalTraffic { src: id }).expect("initial events");
                }
            }
        }

        let vulnerable_total = net.vulnerable_ids().len();
        let (trigger_threshold, triggered) = match params.trigger {
            OutbreakTrigger::InfectedFraction(f) => {
                (((f * vulnerable_total as f64).ceil() as usize).max(1), false)
            }
            OutbreakTrigger::AtTime(t) => {
                engine
                    .schedule(t.saturating_add(1), Event::OutbreakDetected { trigger_time: t })
                    .expect("initial events");
                (usize::MAX, true)
            }
        };

        let mut world = World {
            agents,
            truth,
            outbreak: None,
            protocol_end: None,
            strict: params.strict_causality,
            trigger_threshold,
            triggered,
            unresolved: 0,
            tcp_handshake_ms,
            attack_in_flight: vec![0; host_count],
            max_attack_in_flight: vec![0; host_count],
            worm,
            traffic,
            net,
        };
        // The origins alone may already satisfy the trigger.
        world.check_trigger(&mut engine, 0);

        Ok(Simulation { engine, world, log: Vec::new(), t_end_ms: params.t_end_ms })
    }

    /// Run to the horizon, or stop once the query/reply wave has fully
    /// landed. Every processed event is in the returned trace.
    pub fn run(mut self) -> SimOutcome {
        loop {
            let stop = match self.world.protocol_end {
                Some(p) => p.min(self.t_end_ms),
                None => self.t_end_ms,
            };
            if !self.engine.step_before(stop, &mut self.world, &mut self.log) {
                // No event due by `stop`. If the protocol window just ended
                // we are done; if the trigger fired later than expected the
                // loop re-evaluates `stop` next pass, so only break when
                // nothing changed.
                let new_stop = match self.world.protocol_end {
                    Some(p) => p.min(self.t_end_ms),
                    None => self.t_end_ms,
                };
                if new_stop == stop {
                    break;
                }
            }
        }
        let world = self.world;
        let completed = world.outbreak.is_some()
            && world.unresolved == 0
            && world.protocol_end.is_some_and(|p| p <= self.t_end_ms);
        let (rec_origins, rec_extended) = if completed {
            (
                Some(PropagationGraph::assemble(&world.agents, GraphKind::Origins)),
                Some(PropagationGraph::assemble(&world.agents, GraphKind::Extended)),
            )
        } else {
            (None, None)
        };
        let end_clock_ms = match world.protocol_end {
            Some(p) if completed => p,
            _ => self.t_end_ms,
        };
        SimOutcome {
            log: self.log,
            truth: world.truth,
            net: world.net,
            agents: world.agents,
            outbreak: world.outbreak,
            traceback_completed_ms: completed.then(|| world.protocol_end.expect("set with outbreak")),
            end_clock_ms,
            reconstruction_origins: rec_origins,
            reconstruction_extended: rec_extended,
            max_attack_in_flight: world.max_attack_in_flight,
        }
    }
}

// ---------------------------------------------------------------------------
// Reconstruction from a trace alone
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace contains no outbreak broadcast")]
    NoOutbreak,
    #[error("trace ends before every query was answered")]
    Incomplete,
}

/// What the trace-driven reconstruction yields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReconstruction {
    pub trigger_time: SimTime,
    pub broadcast_time: SimTime,
    pub origins_rule: PropagationGraph,
    pub extended_rule: PropagationGraph,
}

fn replay_agent(
    agents: &mut BTreeMap<HostId, MonitorAgent>,
    host: HostId,
    window_ms: SimTime,
    outbreak: Option<(SimTime, SimTime)>,
) -> &mut MonitorAgent {
    let agent = agents.entry(host).or_insert_with(|| MonitorAgent::new(host, window_ms));
    if let Some((trigger, broadcast)) = outbreak {
        if agent.mode == AgentMode::Monitoring {
            agent.freeze(trigger, broadcast);
        }
    }
    agent
}

/// Rebuild both propagation graphs from an event trace alone, using only
/// what the distributed protocol could see: connection headers
/// (source/protocol/initiation time), the outbreak broadcast, who sent
/// queries, and the replies. Ground-truth annotations in the trace are
/// ignored, so a trace with them stripped reconstructs identically.
pub fn reconstruct_from_trace(
    log: &EventLog<Event>,
    window_ms: SimTime,
    strict: bool,
) -> Result<TraceReconstruction, TraceError> {
    let mut agents: BTreeMap<HostId, MonitorAgent> = BTreeMap::new();
    let mut outbreak: Option<(SimTime, SimTime)> = None;
    for entry in log {
        match &entry.event {
            Event::ConnectionArrive { src, dst, protocol, t_init, .. } => {
                if outbreak.is_none() {
                    replay_agent(&mut agents, *dst, window_ms, outbreak).record_incoming(
                        WindowRecord {
                            src: *src,
                            protocol: *protocol,
                            t_init: *t_init,
                            arrived: entry.time_ms,
                        },
                    );
                }
            }
            Event::OutbreakDetected { trigger_time } => {
                if outbreak.is_none() {
                    outbreak = Some((*trigger_time, entry.time_ms));
                    for agent in agents.values_mut() {
                        agent.freeze(*trigger_time, entry.time_ms);
                    }
                }
            }
            Event::QuerySend { from, .. } => {
                let agent = replay_agent(&mut agents, *from, window_ms, outbreak);
                if !agent.participant {
                    agent.begin_queries(true, strict);
                }
            }
            Event::ReplyArrive { from, to, reply } if from != to => {
                agents
                    .get_mut(to)
                    .expect("querier sent queries earlier in the trace")
                    .receive_reply(*from, *reply, strict);
            }
            _ => {}
        }
    }
    let (trigger_time, broadcast_time) = outbreak.ok_or(TraceError::NoOutbreak)?;
    let list: Vec<MonitorAgent> = agents.into_values().collect();
    if list.iter().any(|a| a.participant && !a.resolved) {
        return Err(TraceError::Incomplete);
    }
    Ok(TraceReconstruction {
        trigger_time,
        broadcast_time,
        origins_rule: PropagationGraph::assemble(&list, GraphKind::Origins),
        extended_rule: PropagationGraph::assemble(&list, GraphKind::Extended),
    })
}
