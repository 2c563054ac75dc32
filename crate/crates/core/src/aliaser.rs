//! Alias detection: a deployment whose random neighbours in the enclosing
//! prefix all answer like it is one host answering for the whole prefix.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Addr128, Prefix};
use crate::blockdedup::CidrSet;
use crate::model::ProtocolSpec;
use crate::prober::{Campaign, ProbeOutcome, Purpose, Target};
use crate::validator::DeploymentRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AliasMethod {
    SubnetSimilarity,
    ImportedAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasVerdict {
    pub address: Addr128,
    pub prefix: Prefix,
    pub probed_neighbors: u32,
    pub similar_responses: u32,
    pub aliased: bool,
    pub method: AliasMethod,
    /// Which similarity rule produced the count.
    pub rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AliasConfig {
    pub prefix_len: u8,
    pub k: u32,
    pub q: u32,
    /// Set from the campaign seed, never read from configuration.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for AliasConfig {
    fn default() -> Self {
        AliasConfig { prefix_len: 64, k: 16, q: 16, rng_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AliasConfigError {
    #[error("q = {q} exceeds k = {k}")]
    ThresholdAboveSample { k: u32, q: u32 },
    #[error("q must be at least 1")]
    ZeroThreshold,
    #[error("a /{0} cannot hold {1} neighbours")]
    PrefixTooSmall(u8, u32),
}

impl AliasConfig {
    pub fn validate(&self) -> Result<(), AliasConfigError> {
        if self.q == 0 {
            return Err(AliasConfigError::ZeroThreshold);
        }
        if self.q > self.k {
            return Err(AliasConfigError::ThresholdAboveSample { k: self.k, q: self.q });
        }
        let room = if self.prefix_len == 0 { u128::MAX } else { (1u128 << (128 - self.prefix_len.min(128) as u32)) - 1 };
        if self.prefix_len > 128 || (self.k as u128) > room {
            return Err(AliasConfigError::PrefixTooSmall(self.prefix_len, self.k));
        }
        Ok(())
    }
}

/// Decides whether a neighbour's answer matches the deployment's own.
pub trait Similarity: Sync {
    fn name(&self) -> &str;
    fn similar(&self, base: &ProbeOutcome, neighbor: &ProbeOutcome) -> bool;
}

/// Same application metadata, and the same certificate fingerprint when
/// the deployment presented one. Invalid answers never match.
#[derive(Debug, Clone, Copy, Default)]
pub struct BannerAndCertificate;

impl Similarity for BannerAndCertificate {
    fn name(&self) -> &str {
        "app-meta+certificate"
    }

    fn similar(&self, base: &ProbeOutcome, neighbor: &ProbeOutcome) -> bool {
        let fp = |o: &ProbeOutcome| o.tls.params().and_then(|p| p.certificate.as_ref()).map(|c| c.fingerprint.clone());
        if !neighbor.app.is_valid() || neighbor.app.meta() != base.app.meta() {
            return false;
        }
        match fp(base) {
            Some(f) => fp(neighbor).as_ref() == Some(&f),
            None => true,
        }
    }
}

/// `k` distinct addresses in the `/len` around `address`, excluding it.
pub fn sample_neighbors(address: Addr128, len: u8, k: u32, rng_seed: u64) -> Vec<Addr128> {
    let prefix = Prefix::truncating(address, len);
    let host_bits = 128 - len as u32;
    let mask = if host_bits >= 128 { u128::MAX } else { (1u128 << host_bits) - 1 };
    let mixed = rng_seed ^ (address.0 as u64) ^ ((address.0 >> 64) as u64).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let mut picked = BTreeSet::new();
    let mut out = Vec::with_capacity(k as usize);
    while out.len() < k as usize {
        let n = Addr128(prefix.base().0 | (rng.gen::<u128>() & mask));
        if n != address && picked.insert(n) {
            out.push(n);
        }
    }
    out
}

/// The port and (D)TLS mode that reproduce the deployment's valid answer.
fn reference_probe(d: &DeploymentRecord) -> Option<(ProtocolSpec, bool)> {
    let secure = d.protocol.secure_port();
    if d.valid_ports.contains(&secure) {
        return Some((ProtocolSpec::secured(d.protocol), true));
    }
    let port = *d.valid_ports.first()?;
    let spec = ProtocolSpec::from_port(d.protocol, port).ok()?;
    Some((spec, d.tls_on_standard_port))
}

/// Probes the deployment itself and `k` neighbours with the handshake that
/// validated it, all through the campaign's arbiter. Unreachable
/// neighbours count as dissimilar.
pub fn detect_aliases(
    campaign: &mut Campaign,
    deployments: &[DeploymentRecord],
    cfg: &AliasConfig,
    similarity: &dyn Similarity,
) -> Result<Vec<AliasVerdict>, AliasConfigError> {
    cfg.validate()?;
    struct Request {
        deployment: usize,
        target: Target,
        secure: bool,
    }
    let mut requests = Vec::new();
    for (i, d) in deployments.iter().enumerate() {
        let Some((spec, secure)) = reference_probe(d) else { continue };
        requests.push(Request { deployment: i, target: Target::new(d.address, spec), secure });
        for n in sample_neighbors(d.address, cfg.prefix_len, cfg.k, cfg.rng_seed) {
            requests.push(Request { deployment: i, target: Target::new(n, spec), secure });
        }
    }
    let outcomes = campaign.followups(
        &requests,
        |r| (r.target, Purpose::AliasNeighbor),
        |prober, r, t, at| prober.probe_as(t, at, r.secure),
    );
    let mut verdicts = Vec::new();
    let group = 1 + cfg.k as usize;
    for (chunk, reqs) in outcomes.chunks(group).zip(requests.chunks(group)) {
        let d = &deployments[reqs[0].deployment];
        let base = &chunk[0].1;
        let similar = if base.app.is_valid() {
            chunk[1..].iter().filter(|(_, o)| similarity.similar(base, o)).count() as u32
        } else {
            0
        };
        verdicts.push(AliasVerdict {
            address: d.address,
            prefix: Prefix::truncating(d.address, cfg.prefix_len),
            probed_neighbors: cfg.k,
            similar_responses: similar,
            aliased: similar >= cfg.q,
            method: AliasMethod::SubnetSimilarity,
            rule: similarity.name().to_string(),
        });
    }
    Ok(verdicts)
}

pub fn detect_alias(
    campaign: &mut Campaign,
    deployment: &DeploymentRecord,
    cfg: &AliasConfig,
) -> Result<Option<AliasVerdict>, AliasConfigError> {
    Ok(detect_aliases(campaign, std::slice::from_ref(deployment), cfg, &BannerAndCertificate)?.pop())
}

/// Verdicts from an alias prefix list, for addresses it covers.
pub fn imported_verdicts(addresses: impl IntoIterator<Item = Addr128>, annotations: &CidrSet) -> Vec<AliasVerdict> {
    addresses
        .into_iter()
        .filter_map(|a| {
            annotations.matching(a).map(|prefix| AliasVerdict {
                address: a,
                prefix,
                probed_neighbors: 0,
                similar_responses: 0,
                aliased: true,
                method: AliasMethod::ImportedAnnotation,
                rule: "imported".to_string(),
            })
        })
        .collect()
}
