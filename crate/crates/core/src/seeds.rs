//! Provenance-tagged seedlists from hitlists, zone-file domains and
//! names observed in IPv4 scans.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use log::{debug, warn};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::addr::{parse_address, Addr128, AddrError};
use crate::blockdedup::{BlockError, CidrSet};
use crate::model::{Protocol, ProtocolSpec, ProtocolSpecError, ProvenancedAddress, SeedSource, SourceTag};

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("line {line}: {source}")]
    MalformedAddress {
        line: usize,
        #[source]
        source: AddrError,
    },
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("alias annotations: {0}")]
    AliasFile(#[from] BlockError),
    #[error("resolver unavailable: {0}")]
    ResolverUnavailable(String),
    #[error("v4 record line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: SeedSource,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Deduplicated addresses, each with the origins that contributed it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedList {
    entries: BTreeMap<Addr128, ProvenancedAddress>,
    pub manifest: Vec<ManifestEntry>,
}

impl SeedList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, address: Addr128, origin: SourceTag) {
        self.entries
            .entry(address)
            .or_insert_with(|| ProvenancedAddress {
                address,
                origins: BTreeSet::new(),
                aliased: false,
            })
            .origins
            .insert(origin);
    }

    pub fn insert_entry(&mut self, entry: ProvenancedAddress) {
        match self.entries.get_mut(&entry.address) {
            Some(existing) => existing.merge(&entry),
            None => {
                self.entries.insert(entry.address, entry);
            }
        }
    }

    /// Unions address sets and origin sets; manifests are concatenated.
    pub fn merge(&mut self, other: SeedList) {
        for entry in other.entries.into_values() {
            self.insert_entry(entry);
        }
        self.manifest.extend(other.manifest);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, a: Addr128) -> bool {
        self.entries.contains_key(&a)
    }

    pub fn get(&self, a: Addr128) -> Option<&ProvenancedAddress> {
        self.entries.get(&a)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ProvenancedAddress> {
        self.entries.values()
    }

    pub fn addresses(&self) -> Vec<Addr128> {
        self.entries.keys().copied().collect()
    }

    /// The sub-list of entries carrying `source` as a direct origin.
    pub fn from_source(&self, source: SeedSource) -> SeedList {
        let tag = SourceTag::Seed(source);
        SeedList {
            entries: self
                .entries
                .iter()
                .filter(|(_, e)| e.origins.contains(&tag))
                .map(|(a, e)| (*a, e.clone()))
                .collect(),
            manifest: self
                .manifest
                .iter()
                .filter(|m| m.source == source)
                .cloned()
                .collect(),
        }
    }

    /// Writes the address list (one per line) to `path`.
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        for a in self.entries.keys() {
            writeln!(out, "{a}")?;
        }
        out.flush()
    }
}

impl FromIterator<ProvenancedAddress> for SeedList {
    fn from_iter<T: IntoIterator<Item = ProvenancedAddress>>(iter: T) -> Self {
        let mut list = SeedList::new();
        for e in iter {
            list.insert_entry(e);
        }
        list
    }
}

fn read_file(path: &Path) -> Result<String, SeedError> {
    fs::read_to_string(path).map_err(|source| SeedError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })
}

fn manifest_entry(source: SeedSource, path: &Path, content: &[u8]) -> ManifestEntry {
    let timestamp = fs::metadata(path)
        .and_then(|m| m.modified())
        .ok()
        .map(|t| chrono::DateTime::<chrono::Utc>::from(t).to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    ManifestEntry {
        source,
        input: path.display().to_string(),
        sha256: Some(hex::encode(Sha256::digest(content))),
        timestamp,
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

/// Parses one-address-per-line text. Addresses inside `aliases` carry the
/// aliased mark.
pub fn parse_hitlist(text: &str, aliases: Option<&CidrSet>, source: SeedSource) -> Result<SeedList, SeedError> {
    let mut list = SeedList::new();
    for (line, literal) in content_lines(text) {
        let address = parse_address(literal).map_err(|source| SeedError::MalformedAddress { line, source })?;
        let mut entry = ProvenancedAddress::new(address, SourceTag::Seed(source));
        entry.aliased = aliases.is_some_and(|set| set.contains(address));
        list.insert_entry(entry);
    }
    Ok(list)
}

/// Loads a hitlist file, tagging every address with `source` (the full TUM
/// input list or its filtered open variant).
pub fn load_hitlist(path: &Path, alias_annotations: Option<&Path>, source: SeedSource) -> Result<SeedList, SeedError> {
    let text = read_file(path)?;
    let aliases = alias_annotations.map(CidrSet::load).transpose()?;
    let mut list = parse_hitlist(&text, aliases.as_ref(), source)?;
    list.manifest.push(manifest_entry(source, path, text.as_bytes()));
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("no AAAA records")]
    NoRecords,
    #[error("lookup failed: {0}")]
    Failed(String),
    #[error("resolver unavailable: {0}")]
    Unavailable(String),
}

/// AAAA lookups. The harness mock and the system stub share this contract.
pub trait Resolver: Sync {
    fn resolve_aaaa(&self, name: &str) -> Result<Vec<Addr128>, ResolveError>;
}

/// Resolves through the operating system's stub resolver.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemResolver;

impl Resolver for SystemResolver {
    fn resolve_aaaa(&self, name: &str) -> Result<Vec<Addr128>, ResolveError> {
        use std::net::{IpAddr, ToSocketAddrs};
        let addrs = (name, 0u16)
            .to_socket_addrs()
            .map_err(|e| ResolveError::Failed(e.to_string()))?;
        let v6: BTreeSet<Addr128> = addrs
            .filter_map(|sa| match sa.ip() {
                IpAddr::V6(a) => Some(Addr128::from(a)),
                IpAddr::V4(_) => None,
            })
            .collect();
        if v6.is_empty() {
            Err(ResolveError::NoRecords)
        } else {
            Ok(v6.into_iter().collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainFailure {
    pub domain: String,
    pub reason: String,
}

/// Result of a resolution pass: the seeds plus per-domain failures, which
/// are recorded rather than fatal.
#[derive(Debug, Clone, Default)]
pub struct Resolution {
    pub seeds: SeedList,
    pub failures: Vec<DomainFailure>,
}

fn normalize_domain(d: &str) -> String {
    d.trim().trim_end_matches('.').to_ascii_lowercase()
}

fn resolve_all(
    queries: Vec<(String, SourceTag)>,
    resolver: &dyn Resolver,
) -> Result<Resolution, SeedError> {
    let answers: Vec<_> = queries
        .into_par_iter()
        .map(|(name, tag)| {
            let r = resolver.resolve_aaaa(&name);
            (name, tag, r)
        })
        .collect();

    let mut out = Resolution::default();
    for (name, tag, answer) in answers {
        match answer {
            Ok(addrs) => {
                for a in addrs {
                    out.seeds.insert(a, tag.clone());
                }
            }
            Err(ResolveError::Unavailable(msg)) => return Err(SeedError::ResolverUnavailable(msg)),
            Err(ResolveError::NoRecords) => debug!("{name}: no AAAA records"),
            Err(e) => {
                warn!("{name}: {e}");
                out.failures.push(DomainFailure {
                    domain: name,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Resolves AAAA records behind zone-file domains. With `include_www`, the
/// `www.` name is queried as well and its answers tagged separately.
pub fn resolve_zone_domains(
    domains: &[String],
    resolver: &dyn Resolver,
    include_www: bool,
) -> Result<Resolution, SeedError> {
    let names: BTreeSet<String> = domains
        .iter()
        .map(|d| normalize_domain(d))
        .filter(|d| !d.is_empty())
        .collect();
    let mut queries = Vec::with_capacity(names.len() * 2);
    for name in names {
        if include_www {
            queries.push((format!("www.{name}"), SourceTag::Seed(SeedSource::DnsZoneWww)));
        }
        queries.push((name, SourceTag::Seed(SeedSource::DnsZone)));
    }
    resolve_all(queries, resolver)
}

/// One record of a previous IPv4 scan on an IoT port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct V4ScanRecord {
    pub v4_address: String,
    #[serde(default)]
    pub rdns_name: Option<String>,
    #[serde(default)]
    pub cert_names: Vec<String>,
    pub port: u16,
    pub protocol: Protocol,
}

impl V4ScanRecord {
    pub fn spec(&self) -> Result<ProtocolSpec, ProtocolSpecError> {
        ProtocolSpec::from_port(self.protocol, self.port)
    }
}

pub fn parse_v4_records(text: &str) -> Result<Vec<V4ScanRecord>, SeedError> {
    content_lines(text)
        .map(|(line, json)| {
            let rec: V4ScanRecord = serde_json::from_str(json).map_err(|e| SeedError::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
            rec.spec().map_err(|e| SeedError::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
            Ok(rec)
        })
        .collect()
}

pub fn load_v4_records(path: &Path) -> Result<Vec<V4ScanRecord>, SeedError> {
    parse_v4_records(&read_file(path)?)
}

pub fn load_domain_list(path: &Path) -> Result<Vec<String>, SeedError> {
    Ok(content_lines(&read_file(path)?).map(|(_, d)| d.to_string()).collect())
}

/// Derives seeds from rDNS names and certificate names seen in IPv4 scans.
/// IPv6 literals in certificates are taken as-is; wildcard names and IPv4
/// literals are skipped.
pub fn derive_from_v4(records: &[V4ScanRecord], resolver: &dyn Resolver) -> Result<Resolution, SeedError> {
    let tag = SourceTag::Seed(SeedSource::V4Derived);
    let mut literals = SeedList::new();
    let mut names = BTreeSet::new();
    for rec in records {
        let candidates = rec.rdns_name.iter().chain(rec.cert_names.iter());
        for raw in candidates {
            let name = raw.trim();
            if name.is_empty() || name.starts_with("*.") {
                continue;
            }
            let literal = name.trim_start_matches('[').trim_end_matches(']');
            if let Ok(a) = parse_address(literal) {
                literals.insert(a, tag.clone());
            } else if name.parse::<Ipv4Addr>().is_err() {
                names.insert(normalize_domain(name));
            }
        }
    }
    let queries = names.into_iter().map(|n| (n, tag.clone())).collect();
    let mut resolution = resolve_all(queries, resolver)?;
    resolution.seeds.merge(literals);
    Ok(resolution)
}

/// Uniform sample without replacement of `min(n, |list|)` entries,
/// deterministic for a fixed `rng_seed`.
pub fn sample_seeds(list: &SeedList, n: usize, rng_seed: u64) -> SeedList {
    if n >= list.len() {
        return list.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let all: Vec<&ProvenancedAddress> = list.entries.values().collect();
    let mut picked: Vec<usize> = index::sample(&mut rng, all.len(), n).into_vec();
    picked.sort_unstable();
    SeedList {
        entries: picked
            .into_iter()
            .map(|i| (all[i].address, all[i].clone()))
            .collect(),
        manifest: list.manifest.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct MockResolver(HashMap<String, Vec<Addr128>>);

    impl MockResolver {
        fn new(pairs: &[(&str, &str)]) -> Self {
            let mut m: HashMap<String, Vec<Addr128>> = HashMap::new();
            for (n, a) in pairs {
                m.entry(n.to_string()).or_default().push(a.parse().unwrap());
            }
            MockResolver(m)
        }
    }

    impl Resolver for MockResolver {
        fn resolve_aaaa(&self, name: &str) -> Result<Vec<Addr128>, ResolveError> {
            if name == "broken.example" {
                return Err(ResolveError::Failed("SERVFAIL".into()));
            }
            self.0.get(name).cloned().ok_or(ResolveError::NoRecords)
        }
    }

    struct DownResolver;

    impl Resolver for DownResolver {
        fn resolve_aaaa(&self, _: &str) -> Result<Vec<Addr128>, ResolveError> {
            Err(ResolveError::Unavailable("connection refused".into()))
        }
    }

    fn a(s: &str) -> Addr128 {
        s.parse().unwrap()
    }

    #[test]
    fn hitlist_parsing() {
        let list = parse_hitlist("# comment\n2001:db8::1\n\n2001:DB8::1\n", None, SeedSource::TumHitlist).unwrap();
        assert_eq!(list.len(), 1);
        let e = list.get(a("2001:db8::1")).unwrap();
        assert_eq!(e.origins, BTreeSet::from([SourceTag::Seed(SeedSource::TumHitlist)]));
        assert!(!e.aliased);

        assert!(parse_hitlist("", None, SeedSource::TumHitlist).unwrap().is_empty());

        let err = parse_hitlist("2001:db8::1\n2001:::1\n", None, SeedSource::TumOpen).unwrap_err();
        assert!(matches!(err, SeedError::MalformedAddress { line: 2, .. }));
    }

    #[test]
    fn hitlist_alias_marks() {
        let dir = tempfile::tempdir().unwrap();
        let hit = dir.path().join("hitlist.txt");
        let alias = dir.path().join("aliases.txt");
        fs::write(&hit, "2001:db8:aa::1\n2001:db8:bb::1\n").unwrap();
        fs::write(&alias, "2001:db8:aa::/48\n").unwrap();
        let list = load_hitlist(&hit, Some(&alias), SeedSource::TumHitlist).unwrap();
        assert!(list.get(a("2001:db8:aa::1")).unwrap().aliased);
        assert!(!list.get(a("2001:db8:bb::1")).unwrap().aliased);
        assert_eq!(list.manifest.len(), 1);
        assert_eq!(list.manifest[0].source, SeedSource::TumHitlist);

        let missing = load_hitlist(&dir.path().join("nope"), None, SeedSource::TumHitlist);
        assert!(matches!(missing, Err(SeedError::UnreadableFile { .. })));
    }

    #[test]
    fn zone_resolution() {
        let r = MockResolver::new(&[("example.org", "2001:db8::10"), ("www.example.org", "2001:db8::11")]);
        let domains = vec!["Example.org.".to_string(), "empty.example".into(), "broken.example".into()];

        let plain = resolve_zone_domains(&domains, &r, false).unwrap();
        assert_eq!(plain.seeds.addresses(), vec![a("2001:db8::10")]);
        assert_eq!(
            plain.seeds.get(a("2001:db8::10")).unwrap().origins,
            BTreeSet::from([SourceTag::Seed(SeedSource::DnsZone)])
        );
        assert_eq!(plain.failures.len(), 1);
        assert_eq!(plain.failures[0].domain, "broken.example");

        let www = resolve_zone_domains(&domains, &r, true).unwrap();
        assert_eq!(www.seeds.len(), 2);
        assert_eq!(
            www.seeds.get(a("2001:db8::11")).unwrap().origins,
            BTreeSet::from([SourceTag::Seed(SeedSource::DnsZoneWww)])
        );

        assert!(matches!(
            resolve_zone_domains(&domains, &DownResolver, false),
            Err(SeedError::ResolverUnavailable(_))
        ));
    }

    #[test]
    fn v4_derivation() {
        let r = MockResolver::new(&[("broker.example.com", "2001:db8::20"), ("mqtt.example.net", "2001:db8::21")]);
        let records = parse_v4_records(concat!(
            r#"{"v4_address":"192.0.2.1","rdns_name":"broker.example.com","cert_names":[],"port":1883,"protocol":"MQTT"}"#,
            "\n",
            r#"{"v4_address":"192.0.2.2","cert_names":["mqtt.example.net","*.example.net","2001:db8::22","192.0.2.9"],"port":8883,"protocol":"MQTT"}"#,
            "\n",
            r#"{"v4_address":"192.0.2.3","rdns_name":"nothing.example","port":5672,"protocol":"AMQP"}"#,
        ))
        .unwrap();
        let res = derive_from_v4(&records, &r).unwrap();
        assert_eq!(
            res.seeds.addresses(),
            vec![a("2001:db8::20"), a("2001:db8::21"), a("2001:db8::22")]
        );
        for e in res.seeds.entries() {
            assert_eq!(e.origins, BTreeSet::from([SourceTag::Seed(SeedSource::V4Derived)]));
        }
        assert!(parse_v4_records(r#"{"v4_address":"x","port":1,"protocol":"MQTT"}"#).is_err());
    }

    fn big_list(n: u64) -> SeedList {
        let mut list = SeedList::new();
        for i in 0..n {
            list.insert(Addr128((0x2001_0db8 << 96) | i as u128), SourceTag::Seed(SeedSource::DnsZone));
        }
        list
    }

    #[test]
    fn sampling() {
        let list = big_list(50_000);
        let s = sample_seeds(&list, 10_000, 7);
        assert_eq!(s.len(), 10_000);
        assert!(s.entries().all(|e| list.get(e.address) == Some(e)));
        assert_eq!(s, sample_seeds(&list, 10_000, 7));
        assert_ne!(s, sample_seeds(&list, 10_000, 8));
        assert_eq!(sample_seeds(&list, 60_000, 7), list);
        assert_eq!(sample_seeds(&list, 0, 7).len(), 0);
    }

    #[test]
    fn merge_unions_origins() {
        let mut x = SeedList::new();
        x.insert(a("2001:db8::1"), SourceTag::Seed(SeedSource::TumHitlist));
        let mut y = SeedList::new();
        y.insert(a("2001:db8::1"), SourceTag::Seed(SeedSource::DnsZone));
        y.insert(a("2001:db8::2"), SourceTag::Seed(SeedSource::DnsZone));
        let mut xy = x.clone();
        xy.merge(y.clone());
        let mut yx = y;
        yx.merge(x);
        assert_eq!(xy.entries().collect::<Vec<_>>(), yx.entries().collect::<Vec<_>>());
        assert_eq!(xy.get(a("2001:db8::1")).unwrap().origins.len(), 2);
        assert_eq!(xy.from_source(SeedSource::TumHitlist).len(), 1);
    }
}
