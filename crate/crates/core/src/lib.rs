//! Scanning-worm outbreak simulator with distributed propagation-path
//! trace-back.
//!
//! The crate is organised around a deterministic discrete-event core:
//!
//! * [`engine`] — millisecond clock, ordered event queue, seeded RNG.
//! * [`network`] — hosts, three-level addresses, subnets, connection
//!   delivery, and the ground-truth infection record.
//! * [`worm`] — scan-target selection, probing cadence, infection and
//!   recovery for UDP- and TCP-style worms.
//! * [`traffic`] — Poisson background traffic so monitor windows contain
//!   realistic non-attack records.
//! * [`traceback`] — per-host monitor agents, the outbreak-triggered
//!   query/reply protocol, and both parent-election rules.
//! * [`sim`] — the event handler that ties the above together for one run.
//! * [`eval`] — precision/recall over edge sets plus DOT rendering.
//! * [`experiment`] — run orchestration, bundled presets, suite reports,
//!   and the on-disk config format.

pub mod engine;
pub mod eval;
pub mod experiment;
pub mod network;
pub mod sim;
pub mod traceback;
pub mod traffic;
pub mod worm;
