//! Three-step classification of probe outcomes and per-protocol
//! deduplication of deployments.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::addr::Addr128;
use crate::model::{Protocol, Variant};
use crate::prober::{AppMeta, ProbeOutcome, TlsStatus, TransportStatus};
use crate::proto::cert::CertSummary;

/// Funnel classes in increasing order of validation depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HostClass {
    FilteredTransport,
    TransportOnly,
    TlsNoApp,
    ValidPlain,
    ValidTls,
}

impl HostClass {
    pub fn is_valid(self) -> bool {
        matches!(self, HostClass::ValidPlain | HostClass::ValidTls)
    }
}

/// Class of a single port's outcome; `None` when nothing answered.
pub fn classify_outcome(o: &ProbeOutcome) -> Option<HostClass> {
    match o.transport {
        TransportStatus::FaultyTransport => Some(HostClass::FilteredTransport),
        TransportStatus::Refused | TransportStatus::Timeout => None,
        TransportStatus::Established => Some(match (&o.tls, o.app.is_valid()) {
            (TlsStatus::Completed(_), true) => HostClass::ValidTls,
            (_, true) => HostClass::ValidPlain,
            (TlsStatus::Completed(_), false) => HostClass::TlsNoApp,
            _ => HostClass::TransportOnly,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortResult {
    pub port: u16,
    pub variant: Variant,
    pub class: Option<HostClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostClassification {
    pub address: Addr128,
    pub protocol: Protocol,
    pub ports: Vec<PortResult>,
    pub class: Option<HostClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("outcomes for {0} do not share one address and protocol")]
pub struct MixedOutcomes(String);

/// Classifies one (address, protocol) from its port outcomes. The host
/// class is the deepest class reached on any port.
pub fn classify_host(outcomes: &[&ProbeOutcome]) -> Result<HostClassification, MixedOutcomes> {
    let first = outcomes.first().ok_or_else(|| MixedOutcomes("empty group".into()))?;
    let (address, protocol) = (first.target.address, first.target.spec.protocol());
    if outcomes
        .iter()
        .any(|o| o.target.address != address || o.target.spec.protocol() != protocol)
    {
        return Err(MixedOutcomes(address.to_string()));
    }
    let mut ports: Vec<PortResult> = outcomes
        .iter()
        .map(|o| PortResult {
            port: o.target.spec.port(),
            variant: o.target.spec.variant(),
            class: classify_outcome(o),
        })
        .collect();
    ports.sort_by_key(|p| p.port);
    let class = ports.iter().filter_map(|p| p.class).max();
    Ok(HostClassification { address, protocol, ports, class })
}

fn group(outcomes: &[ProbeOutcome]) -> BTreeMap<(Addr128, Protocol), Vec<&ProbeOutcome>> {
    let mut g: BTreeMap<(Addr128, Protocol), Vec<&ProbeOutcome>> = BTreeMap::new();
    for o in outcomes {
        g.entry((o.target.address, o.target.spec.protocol())).or_default().push(o);
    }
    g
}

/// Classifies every (address, protocol) group, in address order.
pub fn classify_all(outcomes: &[ProbeOutcome]) -> Vec<HostClassification> {
    group(outcomes)
        .into_par_iter()
        .map(|(_, os)| classify_host(&os).expect("grouped by address and protocol"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub address: Addr128,
    pub protocol: Protocol,
    pub tls_adopting: bool,
    pub class: HostClass,
    /// Ports on which the application answered validly.
    pub valid_ports: Vec<u16>,
    pub tls_on_standard_port: bool,
    pub certificate: Option<CertSummary>,
    pub certificates_differ: bool,
    pub meta: Option<AppMeta>,
}

/// One record per validly answering (address, protocol), however many
/// ports it answered on.
pub fn dedupe_deployments(outcomes: &[ProbeOutcome]) -> Vec<DeploymentRecord> {
    group(outcomes)
        .into_iter()
        .filter_map(|((address, protocol), os)| {
            let valid: Vec<&&ProbeOutcome> = os.iter().filter(|o| o.app.is_valid()).collect();
            if valid.is_empty() {
                return None;
            }
            let class = classify_host(&os).ok()?.class?;
            let mut certs: Vec<&CertSummary> = valid
                .iter()
                .filter_map(|o| o.tls.params().and_then(|p| p.certificate.as_ref()))
                .collect();
            certs.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
            certs.dedup_by(|a, b| a.fingerprint == b.fingerprint);
            // prefer the plaintext meta, which is what a client sees first
            let meta = valid
                .iter()
                .find(|o| !o.tls.is_completed())
                .or(valid.first())
                .and_then(|o| o.app.meta().cloned());
            let mut valid_ports: Vec<u16> = valid.iter().map(|o| o.target.spec.port()).collect();
            valid_ports.sort_unstable();
            Some(DeploymentRecord {
                address,
                protocol,
                tls_adopting: valid.iter().any(|o| o.tls.is_completed()),
                class,
                valid_ports,
                tls_on_standard_port: valid.iter().any(|o| o.tls_on_standard_port),
                certificate: certs.first().map(|c| (*c).clone()),
                certificates_differ: certs.len() > 1,
                meta,
            })
        })
        .collect()
}

/// One funnel row per probed port: hosts that answered at all, completed
/// transport, completed (D)TLS, and answered validly inside (D)TLS.
/// Hosts valid in plaintext never attempt (D)TLS and are counted in
/// `valid_plain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunnelRow {
    pub hosts: u64,
    pub transport: u64,
    pub tls: u64,
    pub valid_tls: u64,
    pub valid_plain: u64,
}

impl FunnelRow {
    pub fn valid(&self) -> u64 {
        self.valid_tls + self.valid_plain
    }

    pub fn is_monotone(&self) -> bool {
        self.hosts >= self.transport
            && self.transport >= self.tls
            && self.tls >= self.valid_tls
            && self.transport >= self.valid()
    }
}

pub fn funnel(outcomes: &[ProbeOutcome]) -> BTreeMap<(Protocol, u16), FunnelRow> {
    let mut rows: BTreeMap<(Protocol, u16), FunnelRow> = BTreeMap::new();
    for o in outcomes {
        let row = rows.entry((o.target.spec.protocol(), o.target.spec.port())).or_default();
        let Some(class) = classify_outcome(o) else {
            continue;
        };
        row.hosts += 1;
        if class == HostClass::FilteredTransport {
            continue;
        }
        row.transport += 1;
        if o.tls.is_completed() {
            row.tls += 1;
        }
        match class {
            HostClass::ValidTls => row.valid_tls += 1,
            HostClass::ValidPlain => row.valid_plain += 1,
            _ => {}
        }
    }
    rows
}
