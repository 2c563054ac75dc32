//! Scheduling under the per-host gap and the global send-rate cap.
//!
//! The simulated timeline is divided into slots of `1 / global_rate_cap`
//! seconds and every handshake occupies one slot, so any one-second window
//! holds at most `global_rate_cap` handshakes. Hosts are additionally held
//! back until `per_host_min_gap` after their previous handshake.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addr::Addr128;
use crate::clock::{self, SimTime};

use super::Target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolitenessPolicy {
    #[serde(with = "clock::duration_secs")]
    pub per_host_min_gap: Duration,
    /// Handshakes per simulated second.
    pub global_rate_cap: u64,
    #[serde(with = "clock::duration_secs")]
    pub mqtt_session_max: Duration,
    pub mqtt_traffic_max: u64,
    pub randomize_order: bool,
}

impl Default for PolitenessPolicy {
    fn default() -> Self {
        PolitenessPolicy {
            per_host_min_gap: Duration::from_secs(15 * 60),
            global_rate_cap: 100_000,
            mqtt_session_max: Duration::from_secs(30 * 60),
            mqtt_traffic_max: 10_000_000,
            randomize_order: true,
        }
    }
}

impl PolitenessPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.per_host_min_gap.is_zero()
            || self.global_rate_cap == 0
            || self.mqtt_session_max.is_zero()
            || self.mqtt_traffic_max == 0
        {
            return Err("politeness parameters must all be positive".into());
        }
        Ok(())
    }

    fn slot_nanos(&self) -> u64 {
        1_000_000_000u64.div_ceil(self.global_rate_cap.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Probe,
    TlsFallback,
    Assessment,
    AliasNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeGrant {
    pub host: Addr128,
    pub port: u16,
    pub at: SimTime,
    pub purpose: Purpose,
}

/// Occupied slots kept as merged half-open runs `start..end`.
#[derive(Debug, Default, Clone)]
struct SlotLedger {
    runs: BTreeMap<u64, u64>,
}

impl SlotLedger {
    fn first_free(&self, from: u64) -> u64 {
        match self.runs.range(..=from).next_back() {
            Some((_, &end)) if end > from => end,
            _ => from,
        }
    }

    fn occupy(&mut self, slot: u64) {
        let mut start = slot;
        let mut end = slot + 1;
        if let Some((&s, &e)) = self.runs.range(..=slot).next_back() {
            debug_assert!(e <= slot, "slot already occupied");
            if e == slot {
                start = s;
            }
        }
        if let Some(&e) = self.runs.get(&end) {
            self.runs.remove(&end);
            end = e;
        }
        self.runs.insert(start, end);
    }
}

/// Single owner of all politeness state. Every handshake of a campaign,
/// including follow-ups, is granted here.
#[derive(Debug, Clone)]
pub struct Arbiter {
    policy: PolitenessPolicy,
    last: HashMap<Addr128, SimTime>,
    slots: SlotLedger,
    log: Vec<HandshakeGrant>,
}

impl Arbiter {
    pub fn new(policy: PolitenessPolicy) -> Self {
        Arbiter {
            policy,
            last: HashMap::new(),
            slots: SlotLedger::default(),
            log: Vec::new(),
        }
    }

    pub fn policy(&self) -> &PolitenessPolicy {
        &self.policy
    }

    /// Earliest admissible handshake time at or after `earliest`.
    pub fn reserve(&mut self, host: Addr128, port: u16, earliest: SimTime, purpose: Purpose) -> SimTime {
        let mut t = earliest;
        if let Some(&prev) = self.last.get(&host) {
            t = t.max(prev + self.policy.per_host_min_gap);
        }
        let slot_ns = self.policy.slot_nanos();
        let slot = self.slots.first_free(t.as_nanos().div_ceil(slot_ns));
        self.slots.occupy(slot);
        let at = SimTime::from_nanos(slot * slot_ns);
        self.last.insert(host, at);
        self.log.push(HandshakeGrant { host, port, at, purpose });
        at
    }

    pub fn grants(&self) -> &[HandshakeGrant] {
        &self.log
    }

    pub fn latest_grant(&self) -> Option<SimTime> {
        self.log.iter().map(|g| g.at).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedProbe {
    pub at: SimTime,
    pub target: Target,
}

/// Orders `targets` by a seeded permutation and grants each a handshake
/// slot. The plan is returned in emission order.
pub fn schedule_batch(targets: &[Target], arbiter: &mut Arbiter, start: SimTime, rng_seed: u64) -> Vec<PlannedProbe> {
    let mut order: Vec<Target> = targets.to_vec();
    if arbiter.policy.randomize_order {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    }
    let mut plan: Vec<PlannedProbe> = order
        .into_iter()
        .map(|target| PlannedProbe {
            at: arbiter.reserve(target.address, target.spec.port(), start, Purpose::Probe),
            target,
        })
        .collect();
    plan.sort_by_key(|p| p.at);
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapViolation {
    pub host: Addr128,
    pub first: SimTime,
    pub second: SimTime,
}

/// Consecutive handshakes to one host closer than `gap`.
pub fn audit_host_gaps(grants: &[HandshakeGrant], gap: Duration) -> Vec<GapViolation> {
    let mut by_host: BTreeMap<Addr128, Vec<SimTime>> = BTreeMap::new();
    for g in grants {
        by_host.entry(g.host).or_default().push(g.at);
    }
    let mut out = Vec::new();
    for (host, mut times) in by_host {
        times.sort();
        for w in times.windows(2) {
            if w[1].since(w[0]) < gap {
                out.push(GapViolation { host, first: w[0], second: w[1] });
            }
        }
    }
    out
}

/// Smallest gap between consecutive handshakes to the same host.
pub fn min_host_gap(grants: &[HandshakeGrant]) -> Option<Duration> {
    let mut by_host: BTreeMap<Addr128, Vec<SimTime>> = BTreeMap::new();
    for g in grants {
        by_host.entry(g.host).or_default().push(g.at);
    }
    by_host
        .into_values()
        .flat_map(|mut t| {
            t.sort();
            t.windows(2).map(|w| w[1].since(w[0])).collect::<Vec<_>>()
        })
        .min()
}

/// Largest number of handshakes inside any half-open one-second window.
pub fn audit_peak_rate(grants: &[HandshakeGrant]) -> u64 {
    let mut times: Vec<u64> = grants.iter().map(|g| g.at.as_nanos()).collect();
    times.sort_unstable();
    let mut peak = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] >= 1_000_000_000 {
            lo += 1;
        }
        peak = peak.max(hi - lo + 1);
    }
    peak as u64
}
