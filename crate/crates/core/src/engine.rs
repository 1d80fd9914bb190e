//! Deterministic discrete-event engine: integer-millisecond clock, an event
//! queue ordered by `(time, insertion sequence)`, and a single seeded RNG
//! stream. Everything else in the crate schedules work through this module,
//! which is what makes whole runs reproducible from `(seed, config)` alone.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in whole milliseconds since the start of the run.
pub type SimTime = u64;

/// Seed for the engine's single RNG stream.
pub type Seed = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled at {event_time} ms, but the clock is already at {clock} ms")]
    ScheduleInPast { event_time: SimTime, clock: SimTime },
}

/// A named distribution that can be drawn from the engine's RNG stream.
///
/// Parameters are validated when a config is loaded, so sampling itself
/// never fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// Uniform integer draw over `lo..=hi` milliseconds.
    Uniform { lo: SimTime, hi: SimTime },
    /// Bernoulli trial; samples as 1.0 (success) or 0.0.
    Bernoulli { p: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("uniform bounds inverted: lo={lo} > hi={hi}")]
    InvertedBounds { lo: SimTime, hi: SimTime },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<(), DistributionError> {
        match *self {
            DistributionSpec::Uniform { lo, hi } => {
                if lo > hi {
                    return Err(DistributionError::InvertedBounds { lo, hi });
                }
            }
            DistributionSpec::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) || p.is_nan() {
                    return Err(DistributionError::BadProbability(p));
                }
            }
        }
        Ok(())
    }
}

/// One processed event: the clock value it ran at plus its payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent<E> {
    pub time_ms: SimTime,
    #[serde(flatten)]
    pub event: E,
}

/// Ordered log of processed events. Rendered as JSON lines for the trace
/// file: one `{"time_ms": .., "kind": .., "payload": ..}` object per line.
pub type EventLog<E> = Vec<LoggedEvent<E>>;

/// Serialize an event log as JSON lines.
pub fn log_to_jsonl<E: Serialize>(log: &EventLog<E>) -> String {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines trace back into an event log. Blank lines are ignored.
pub fn log_from_jsonl<E: serde::de::DeserializeOwned>(
    text: &str,
) -> Result<EventLog<E>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug)]
struct Scheduled<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

// Heap ordering: earliest time first, then lowest insertion sequence, so
// equal-time events are processed in the order they were scheduled.
impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Handles events popped by [`Engine::run_until`]. The handler may schedule
/// further events and draw randomness through the engine it is handed.
pub trait Handler<E> {
    fn handle(&mut self, engine: &mut Engine<E>, time: SimTime, event: &E);
}

/// The event queue, clock, and RNG stream for one simulation run.
pub struct Engine<E> {
    clock: SimTime,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
    next_seq: u64,
    rng: ChaCha8Rng,
}

impl<E> Engine<E> {
    pub fn new(seed: Seed) -> Self {
        Engine {
            clock: 0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Queue `event` for time `at`. Scheduling into the past is a contract
    /// violation by the caller and is reported as an error.
    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<(), EngineError> {
        if at < self.clock {
            return Err(EngineError::ScheduleInPast { event_time: at, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { time: at, seq, event }));
        Ok(())
    }

    /// Draw from a named distribution using the engine's single RNG stream.
    pub fn rng_draw(&mut self, dist: DistributionSpec) -> f64 {
        match dist {
            DistributionSpec::Uniform { lo, hi } => self.rng.random_range(lo..=hi) as f64,
            DistributionSpec::Bernoulli { p } => {
                if self.rng.random_bool(p) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Process every queued event with `time <= t_end` in `(time, seq)`
    /// order, appending each to `log` before its handler runs. On return the
    /// clock equals `t_end` even if the queue emptied earlier.
    pub fn run_until<H: Handler<E>>(&mut self, t_end: SimTime, handler: &mut H, log: &mut EventLog<E>)
    where
        E: Clone,
    {
        while self.step_before(t_end, handler, log) {}
        self.clock = self.clock.max(t_end);
    }

    /// Process the single next event if it is due at or before `t_end`.
    /// Returns false when no such event exists (the clock is left alone, so
    /// callers driving step-wise can stop on their own condition).
    pub fn step_before<H: Handler<E>>(
        &mut self,
        t_end: SimTime,
        handler: &mut H,
        log: &mut EventLog<E>,
    ) -> bool
    where
        E: Clone,
    {
        match self.queue.peek() {
            Some(Reverse(head)) if head.time <= t_end => {}
            _ => return false,
        }
        let Reverse(next) = self.queue.pop().expect("peeked entry");
        debug_assert!(next.time >= self.clock, "clock must never move backwards");
        self.clock = next.time;
        log.push(LoggedEvent { time_ms: next.time, event: next.event.clone() });
        handler.handle(self, next.time, &next.event);
        true
    }
}
