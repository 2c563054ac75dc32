use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::addr::{Addr128, Prefix};
use crate::model::{Protocol, Transport};
use crate::prober::dispatch::{Connect, Dispatcher};
use crate::prober::Target;
use crate::proto::cert::CertSummary;
use crate::seeds::{ResolveError, Resolver};

use super::responder::{Plant, PlantSession, PortUnreachable, Service, Void};
use super::spec::{AddressSpec, Behavior, HarnessError, PlantFlags, UniverseSpec};
use super::truth::{expected, GroundTruth};

/// Largest cluster region the sampler accepts.
const MAX_REGION: u128 = 1 << 40;

const TOPICS: [&str; 10] = [
    "sensors/temperature",
    "sensors/humidity",
    "home/livingroom/light",
    "home/garage/door",
    "factory/line1/status",
    "factory/line1/counter",
    "tele/plug/STATE",
    "zigbee2mqtt/bridge/state",
    "owntracks/phone/location",
    "shellies/announce",
];

const COAP_RESOURCES: [&str; 6] = ["/sensors/temp", "/sensors/light", "/actuators/led", "/fw", "/config", "/battery"];

/// The planted deployments, answering probes in-process.
#[derive(Debug, Clone)]
pub struct Universe {
    plants: Vec<Arc<Plant>>,
    by_address: HashMap<Addr128, usize>,
    /// Alias prefixes, longest first.
    aliases: Vec<(Prefix, usize)>,
    domains: BTreeMap<String, Vec<Addr128>>,
    latency: Duration,
}

fn make_plant(
    index: usize,
    address: Addr128,
    protocol: Protocol,
    behaviors: &[Behavior],
    rng: &mut ChaCha8Rng,
) -> Result<Plant, HarnessError> {
    let flags = PlantFlags::from_behaviors(address, behaviors).map_err(|reason| HarnessError::InvalidBehavior {
        address: address.to_string(),
        protocol,
        reason,
    })?;
    let ec = !(flags.sha1 || flags.short_key) && rng.gen_bool(0.25);
    let (sig, alg, bits) = match (flags.sha1, flags.short_key, ec) {
        (_, _, true) => ("ecdsa-with-SHA256", "ec", 256),
        (true, true, _) => ("sha1WithRSAEncryption", "rsa", 1024),
        (true, false, _) => ("sha1WithRSAEncryption", "rsa", 2048),
        (false, true, _) => ("sha256WithRSAEncryption", "rsa", 1024),
        (false, false, _) => ("sha256WithRSAEncryption", "rsa", 2048),
    };
    let cn = format!("{}-{index:05}.devices.example", protocol.name().to_ascii_lowercase());
    let certificate = flags.speaks_tls().then(|| {
        CertSummary::new(&cn, vec![cn.clone()], sig, alg, bits, ("2023-01-01T00:00:00Z", "2028-01-01T00:00:00Z"))
    });
    let n_topics = rng.gen_range(1..=6);
    let mut topics: Vec<String> = sample(rng, TOPICS.len(), n_topics).into_iter().map(|i| TOPICS[i].to_string()).collect();
    topics.sort();
    let n_res = rng.gen_range(1..=4);
    let mut coap_resources: Vec<String> =
        sample(rng, COAP_RESOURCES.len(), n_res).into_iter().map(|i| COAP_RESOURCES[i].to_string()).collect();
    coap_resources.sort();
    Ok(Plant {
        index,
        address,
        protocol,
        behaviors: behaviors.to_vec(),
        flags,
        certificate,
        topics,
        amqp_offers_anonymous: rng.gen_bool(0.5),
        coap_resources,
    })
}

fn claim(taken: &mut HashMap<Addr128, usize>, a: Addr128, n: usize) -> Result<(), HarnessError> {
    match taken.insert(a, n) {
        Some(_) => Err(HarnessError::DuplicatePlantedAddress(a)),
        None => Ok(()),
    }
}

/// Materializes a universe and its ground truth. The same spec always
/// yields the same plants, addresses and certificates.
pub fn build_universe(spec: &UniverseSpec) -> Result<(Universe, GroundTruth), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut placed: Vec<(Addr128, Protocol, &[Behavior])> = Vec::new();
    let mut by_address: HashMap<Addr128, usize> = HashMap::new();

    for c in &spec.clusters {
        let bad = |reason: &str| HarnessError::InvalidCluster { prefix: c.prefix, reason: reason.to_string() };
        if !(c.density > 0.0 && c.density <= 1.0) {
            return Err(bad("density must lie in (0, 1]"));
        }
        if c.templates.is_empty() && c.count > 0 {
            return Err(bad("no plant templates"));
        }
        let region = c.region_size();
        if region > c.prefix.size() || region > MAX_REGION {
            return Err(bad("region does not fit the prefix"));
        }
        let mut offsets = sample(&mut rng, region as usize, c.count).into_vec();
        offsets.sort_unstable();
        for (i, off) in offsets.into_iter().enumerate() {
            let a = Addr128(c.prefix.base().0 + off as u128);
            let t = &c.templates[i % c.templates.len()];
            claim(&mut by_address, a, placed.len())?;
            placed.push((a, t.protocol, &t.behaviors));
        }
    }
    for d in &spec.deployments {
        if let AddressSpec::Fixed(a) = d.address {
            claim(&mut by_address, a, placed.len())?;
            placed.push((a, d.protocol, &d.behaviors));
        }
    }
    // auto placement last, so explicit addresses never collide with it
    let host_bits = 128 - spec.auto_prefix.len() as u32;
    for d in spec.deployments.iter().filter(|d| d.address == AddressSpec::Auto) {
        let mut found = None;
        for _ in 0..64 {
            let off: u128 = if host_bits >= 128 { rng.gen() } else { rng.gen::<u128>() & ((1u128 << host_bits) - 1) };
            let a = Addr128(spec.auto_prefix.base().0 | off);
            if !by_address.contains_key(&a) {
                found = Some(a);
                break;
            }
        }
        let a = found.ok_or(HarnessError::AutoPrefixExhausted(spec.auto_prefix))?;
        claim(&mut by_address, a, placed.len())?;
        placed.push((a, d.protocol, &d.behaviors));
    }

    let plants: Vec<Arc<Plant>> = placed
        .iter()
        .enumerate()
        .map(|(i, (a, p, b))| make_plant(i, *a, *p, b, &mut rng).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut aliases: Vec<(Prefix, usize)> =
        plants.iter().filter_map(|p| p.flags.alias.map(|pre| (pre, p.index))).collect();
    aliases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
    let truth = GroundTruth::new(plants.iter().map(|p| expected(p)).collect());
    let universe = Universe { plants, by_address, aliases, domains: spec.domains.clone(), latency: spec.latency };
    Ok((universe, truth))
}

impl Universe {
    pub fn from_json(text: &str) -> Result<(Universe, GroundTruth), HarnessError> {
        build_universe(&serde_json::from_str(text)?)
    }

    pub fn plants(&self) -> &[Arc<Plant>] {
        &self.plants
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    /// The plant answering at `address`: an exact plant, else the plant
    /// whose alias prefix covers it.
    pub fn plant_at(&self, address: Addr128) -> Option<&Arc<Plant>> {
        if let Some(&i) = self.by_address.get(&address) {
            return Some(&self.plants[i]);
        }
        self.aliases.iter().find(|(p, _)| p.contains(address)).map(|&(_, i)| &self.plants[i])
    }

    pub fn resolver(&self) -> MockResolver {
        MockResolver { domains: self.domains.clone() }
    }
}

impl Dispatcher for Universe {
    fn connect(&self, target: &Target, timeout: Duration) -> (Connect, Duration) {
        let transport = target.spec.transport();
        let Some(plant) = self.plant_at(target.address) else {
            return match transport {
                Transport::StreamTcp => (Connect::Timeout, timeout),
                Transport::DatagramUdp => (Connect::Established(Box::new(Void)), Duration::ZERO),
            };
        };
        let port = target.spec.port();
        let service = plant.service(target.spec.protocol(), port);
        let latency = self.latency.min(timeout);
        match (service, transport) {
            (Service::Closed, Transport::StreamTcp) => (Connect::Refused, latency),
            (Service::Closed, Transport::DatagramUdp) => {
                (Connect::Established(Box::new(PortUnreachable(self.latency))), Duration::ZERO)
            }
            (Service::Faulty, Transport::StreamTcp) => (Connect::Faulty, latency),
            (_, Transport::StreamTcp) => {
                (Connect::Established(Box::new(PlantSession::new(Arc::clone(plant), port, service, self.latency))), latency)
            }
            (_, Transport::DatagramUdp) => (
                Connect::Established(Box::new(PlantSession::new(Arc::clone(plant), port, service, self.latency))),
                Duration::ZERO,
            ),
        }
    }
}

/// Resolver answering from the universe's domain table.
#[derive(Debug, Clone, Default)]
pub struct MockResolver {
    domains: BTreeMap<String, Vec<Addr128>>,
}

impl MockResolver {
    pub fn new(domains: BTreeMap<String, Vec<Addr128>>) -> Self {
        MockResolver { domains }
    }
}

impl Resolver for MockResolver {
    fn resolve_aaaa(&self, name: &str) -> Result<Vec<Addr128>, ResolveError> {
        let key = name.trim_end_matches('.').to_ascii_lowercase();
        match self.domains.iter().find(|(k, _)| k.trim_end_matches('.').eq_ignore_ascii_case(&key)) {
            Some((_, v)) if !v.is_empty() => Ok(v.clone()),
            _ => Err(ResolveError::NoRecords),
        }
    }
}
