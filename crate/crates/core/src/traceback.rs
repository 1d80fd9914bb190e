//! Distributed trace-back: per-host monitor agents keep a sliding window of
//! incoming connection headers; when an outbreak is announced the windows
//! freeze, every infected agent queries the sources in its window, and each
//! reply feeds two parent-election rules:
//!
//! * the baseline rule picks the first source (in window order) that
//!   answers "yes, I am infected", and
//! * the extended rule keeps only sources whose earliest connection was
//!   initiated at-or-after their own infection time and picks the one that
//!   connected earliest, breaking exact ties towards the smaller host id.
//!
//! Agents only ever see [`WindowRecord`]s — connection headers without any
//! ground-truth annotation — so the reconstruction cannot cheat.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::network::{HostId, HostState, Protocol};

/// What a monitor agent is allowed to see of one incoming connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub src: HostId,
    pub protocol: Protocol,
    /// When the source initiated the connection.
    pub t_init: SimTime,
    /// When it reached this host (one link delay later).
    pub arrived: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    Monitoring,
    TraceBack,
}

/// Reply to an infection query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "answer", rename_all = "snake_case")]
pub enum Reply {
    No,
    Yes { t_infect: SimTime },
}

/// A queried source host: its earliest in-window connection time and, once
/// it arrives, its reply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub src: HostId,
    /// Earliest `t_init` among this source's records in the frozen window.
    pub t_conn: SimTime,
    pub reply: Option<Reply>,
}

/// Per-host monitor. One exists on every host, vulnerable or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorAgent {
    pub host: HostId,
    pub window_ms: SimTime,
    pub mode: AgentMode,
    records: VecDeque<WindowRecord>,
    /// Whether this agent's host was infected when the outbreak fired; only
    /// participants query and contribute nodes to the reconstruction.
    pub participant: bool,
    /// One per distinct source, in window (first-appearance) order.
    pub candidates: Vec<Candidate>,
    pending_replies: usize,
    pub resolved: bool,
    pub parent_extended: Option<HostId>,
    pub parent_origins: Option<HostId>,
}

impl MonitorAgent {
    pub fn new(host: HostId, window_ms: SimTime) -> Self {
        MonitorAgent {
            host,
            window_ms,
            mode: AgentMode::Monitoring,
            records: VecDeque::new(),
            participant: false,
            candidates: Vec::new(),
            pending_replies: 0,
            resolved: false,
            parent_extended: None,
            parent_origins: None,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &WindowRecord> {
        self.records.iter()
    }

    /// Record one incoming connection header and slide the window: records
    /// initiated before `arrived - window_ms` fall out. The boundary is
    /// closed — a record initiated exactly one window ago is retained.
    /// Ignored entirely once the window is frozen.
    pub fn record_incoming(&mut self, rec: WindowRecord) {
        if self.mode != AgentMode::Monitoring {
            return;
        }
        debug_assert!(self.records.back().is_none_or(|r| r.arrived <= rec.arrived));
        self.records.push_back(rec);
        let cutoff = rec.arrived.saturating_sub(self.window_ms);
        while self.records.front().is_some_and(|r| r.t_init < cutoff) {
            self.records.pop_front();
        }
    }

    /// Freeze the window when the outbreak broadcast lands. Eviction runs one
    /// final time against the broadcast clock, and records that arrived
    /// after the detection instant itself are dropped so the frozen contents
    /// do not depend on message interleaving at the freeze boundary.
    pub fn freeze(&mut self, trigger_time: SimTime, broadcast_time: SimTime) {
        debug_assert_eq!(self.mode, AgentMode::Monitoring);
        let cutoff = broadcast_time.saturating_sub(self.window_ms);
        self.records.retain(|r| r.t_init >= cutoff && r.arrived <= trigger_time);
        self.mode = AgentMode::TraceBack;
    }

    /// Start the query phase. Returns the distinct sources to query, in
    /// window order. Non-participants and empty windows resolve on the spot.
    pub fn begin_queries(&mut self, participant: bool, strict: bool) -> Vec<HostId> {
        debug_assert_eq!(self.mode, AgentMode::TraceBack);
        self.participant = participant;
        if !participant {
            self.resolved = true;
            return Vec::new();
        }
        self.candidates.clear();
        for rec in &self.records {
            match self.candidates.iter_mut().find(|c| c.src == rec.src) {
                Some(c) => c.t_conn = c.t_conn.min(rec.t_init),
                None => self.candidates.push(Candidate { src: rec.src, t_conn: rec.t_init, reply: None }),
            }
        }
        self.pending_replies = self.candidates.len();
        if self.pending_replies == 0 {
            self.finalize(strict);
        }
        self.candidates.iter().map(|c| c.src).collect()
    }

    /// Feed one reply in. Once the last expected reply lands, both parent
    /// rules run and the agent is resolved.
    pub fn receive_reply(&mut self, from: HostId, reply: Reply, strict: bool) {
        let c = self
            .candidates
            .iter_mut()
            .find(|c| c.src == from)
            .expect("reply from a host this agent never queried");
        assert!(c.reply.is_none(), "duplicate reply from host {from}");
        c.reply = Some(reply);
        self.pending_replies -= 1;
        if self.pending_replies == 0 {
            self.finalize(strict);
        }
    }

    fn finalize(&mut self, strict: bool) {
        self.parent_extended = select_parent_extended(&self.candidates, strict);
        self.parent_origins = select_parent_origins(&self.candidates);
        self.resolved = true;
    }
}

/// How a queried host answers: with its infection time if it is (or was)
/// infected, evaluated against its state when the query arrives.
pub fn answer_query(state: &HostState) -> Reply {
    match state.infection_time() {
        Some(t_infect) => Reply::Yes { t_infect },
        None => Reply::No,
    }
}

/// Extended rule: among sources that replied yes AND whose earliest
/// connection was initiated at-or-after their own infection time (strictly
/// after, with `strict`), pick the earliest connector; exact `t_conn` ties
/// go to the smaller host id. `None` when no source qualifies.
pub fn select_parent_extended(candidates: &[Candidate], strict: bool) -> Option<HostId> {
    candidates
        .iter()
        .filter_map(|c| {
            let reply = c.reply.expect("parent selection before all replies arrived");
            match reply {
                Reply::Yes { t_infect } => {
                    let qualifies =
                        if strict { c.t_conn > t_infect } else { c.t_conn >= t_infect };
                    qualifies.then_some((c.t_conn, c.src))
                }
                Reply::No => None,
            }
        })
        .min()
        .map(|(_, src)| src)
}

/// Baseline rule: the first source in window order that replied yes,
/// regardless of timing.
pub fn select_parent_origins(candidates: &[Candidate]) -> Option<HostId> {
    candidates.iter().find_map(|c| {
        match c.reply.expect("parent selection before all replies arrived") {
            Reply::Yes { .. } => Some(c.src),
            Reply::No => None,
        }
    })
}

// ---------------------------------------------------------------------------
// Propagation graphs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Reconstructed with the baseline first-yes rule.
    Origins,
    /// Reconstructed with the extended causality rule.
    Extended,
    /// The simulator's own record of what actually happened.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub parent: HostId,
    pub child: HostId,
}

/// A propagation forest: parent edges, origin nodes (no parent), and the
/// set of hosts believed infected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationGraph {
    pub rule: GraphKind,
    pub edges: Vec<Edge>,
    pub origins: Vec<HostId>,
    pub infected: Vec<HostId>,
}

impl PropagationGraph {
    /// Collect every resolved agent's choice under `rule` into one graph.
    ///
    /// Nodes are the participants (agents infected at the detection instant)
    /// plus every host that answered a query with "yes"; origins are the
    /// participants for which the rule elected no parent.
    pub fn assemble(agents: &[MonitorAgent], rule: GraphKind) -> PropagationGraph {
        let mut edges = Vec::new();
        let mut origins = Vec::new();
        let mut infected = BTreeSet::new();
        let mut by_id: Vec<&MonitorAgent> = agents.iter().collect();
        by_id.sort_by_key(|a| a.host);
        for agent in by_id {
            for c in &agent.candidates {
                if matches!(c.reply, Some(Reply::Yes { .. })) {
                    infected.insert(c.src);
                }
            }
            if !agent.participant {
                continue;
            }
            assert!(agent.resolved, "trace-back left agent {} unresolved", agent.host);
            infected.insert(agent.host);
            let parent = match rule {
                GraphKind::Origins => agent.parent_origins,
                GraphKind::Extended => agent.parent_extended,
                GraphKind::GroundTruth => panic!("ground truth is not assembled from agents"),
            };
            match parent {
                Some(p) => {
                    assert_ne!(p, agent.host, "self-edges are impossible by construction");
                    edges.push(Edge { parent: p, child: agent.host });
                }
                None => origins.push(agent.host),
            }
        }
        edges.sort();
        PropagationGraph { rule, edges, origins, infected: infected.into_iter().collect() }
    }

    /// The real infection forest, restricted to infections that had
    /// happened by `cutoff` (the detection instant).
    pub fn ground_truth(truth: &crate::network::GroundTruth, cutoff: SimTime) -> PropagationGraph {
        let infected: BTreeSet<HostId> = truth
            .infections
            .iter()
            .filter(|(_, t)| *t <= cutoff)
            .map(|(h, _)| *h)
            .collect();
        let mut edges: Vec<Edge> = truth
            .edges
            .iter()
            .filter(|e| e.t_infect <= cutoff)
            .map(|e| Edge { parent: e.parent, child: e.child })
            .collect();
        edges.sort();
        let children: BTreeSet<HostId> = edges.iter().map(|e| e.child).collect();
        let origins: Vec<HostId> =
            infected.iter().copied().filter(|h| !children.contains(h)).collect();
        PropagationGraph {
            rule: GraphKind::GroundTruth,
            edges,
            origins,
            infected: infected.into_iter().collect(),
        }
    }

    pub fn edge_set(&self) -> BTreeSet<(HostId, HostId)> {
        self.edges.iter().map(|e| (e.parent, e.child)).collect()
    }
}
