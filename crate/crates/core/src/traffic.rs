//! Background traffic: per-host Poisson flow generation over a weighted mix
//! of everyday services. Its purpose is to fill monitor windows with
//! legitimate records the trace-back protocol has to see through.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimTime;
use crate::network::{HostId, Network, ServiceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceLabel {
    Http,
    Https,
    Dns,
    Ssh,
    Ftp,
    Email,
    Ping,
}

impl ServiceLabel {
    /// The server role a flow of this service targets. `None` means any
    /// host can be the destination (ping).
    pub fn server_kind(self) -> Option<ServiceKind> {
        match self {
            ServiceLabel::Http => Some(ServiceKind::HttpServer),
            ServiceLabel::Https => Some(ServiceKind::HttpsServer),
            ServiceLabel::Dns => Some(ServiceKind::DnsServer),
            ServiceLabel::Ssh => Some(ServiceKind::SshServer),
            ServiceLabel::Ftp => Some(ServiceKind::FtpServer),
            ServiceLabel::Email => Some(ServiceKind::EmailServer),
            ServiceLabel::Ping => None,
        }
    }
}

/// Who may initiate background flows and how destinations are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// Every host emits, destinations uniform over all other hosts.
    Uniform,
    /// Only client hosts emit; destinations are servers of the drawn
    /// service (ping ignores roles).
    ClientServer,
}

/// Background traffic parameters, read from the `[traffic]` config table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Mean flows per second per emitting host. Zero disables traffic.
    pub flow_rate_per_host: f64,
    pub pair_selection: PairSelection,
    /// `(service, weight)` mix; weights must sum to 1.
    pub service_mix: Vec<(ServiceLabel, f64)>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            flow_rate_per_host: 1.0,
            pair_selection: PairSelection::ClientServer,
            service_mix: vec![
                (ServiceLabel::Http, 0.25),
                (ServiceLabel::Https, 0.10),
                (ServiceLabel::Dns, 0.20),
                (ServiceLabel::Ssh, 0.10),
                (ServiceLabel::Ftp, 0.10),
                (ServiceLabel::Email, 0.15),
                (ServiceLabel::Ping, 0.10),
            ],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrafficConfigError {
    #[error("flow rate must be finite and non-negative, got {0}")]
    BadRate(f64),
    #[error("service mix weights sum to {0}, expected 1")]
    MixSum(f64),
    #[error("service mix weights must be non-negative")]
    NegativeWeight,
    #[error("service mix must not be empty")]
    EmptyMix,
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficConfigError> {
        if !self.flow_rate_per_host.is_finite() || self.flow_rate_per_host < 0.0 {
            return Err(TrafficConfigError::BadRate(self.flow_rate_per_host));
        }
        if self.service_mix.is_empty() {
            return Err(TrafficConfigError::EmptyMix);
        }
        if self.service_mix.iter().any(|(_, w)| *w < 0.0) {
            return Err(TrafficConfigError::NegativeWeight);
        }
        let sum: f64 = self.service_mix.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TrafficConfigError::MixSum(sum));
        }
        Ok(())
    }

    /// Whether `host` initiates background flows under this profile.
    pub fn emits(&self, service: ServiceKind) -> bool {
        match self.pair_selection {
            PairSelection::Uniform => true,
            PairSelection::ClientServer => service == ServiceKind::Client,
        }
    }

    pub fn draw_service(&self, rng: &mut ChaCha8Rng) -> ServiceLabel {
        let mut r: f64 = rng.random();
        for (label, w) in &self.service_mix {
            if r < *w {
                return *label;
            }
            r -= w;
        }
        self.service_mix.last().expect("validated non-empty").0
    }
}

/// Exponential inter-flow gap in whole ms (>= 1) for a Poisson process with
/// the given per-second rate.
pub fn sample_flow_gap_ms(rng: &mut ChaCha8Rng, rate_per_sec: f64) -> SimTime {
    debug_assert!(rate_per_sec > 0.0);
    let mean_ms = 1000.0 / rate_per_sec;
    let u: f64 = rng.random();
    let gap = -(1.0 - u).ln() * mean_ms;
    (gap.round() as SimTime).max(1)
}

/// Choose a destination for one flow, or `None` when the profile has no
/// eligible target (e.g. no server of the drawn service exists).
pub fn pick_destination(
    rng: &mut ChaCha8Rng,
    net: &Network,
    src: HostId,
    label: ServiceLabel,
    pair: PairSelection,
) -> Option<HostId> {
    let uniform_other = |rng: &mut ChaCha8Rng| -> Option<HostId> {
        let n = net.hosts.len() as u32;
        if n < 2 {
            return None;
        }
        let pick = rng.random_range(0..n - 1);
        Some(if pick >= src { pick + 1 } else { pick })
    };
    match (pair, label.server_kind()) {
        (PairSelection::Uniform, _) | (PairSelection::ClientServer, None) => uniform_other(rng),
        (PairSelection::ClientServer, Some(kind)) => {
            let servers: Vec<HostId> = net
                .hosts
                .iter()
                .filter(|h| h.service == kind && h.id != src)
                .map(|h| h.id)
                .collect();
            if servers.is_empty() {
                None
            } else {
                Some(servers[rng.random_range(0..servers.len())])
            }
        }
    }
}
