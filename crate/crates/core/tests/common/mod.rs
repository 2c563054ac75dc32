//! The shared 1000-deployment universe: 980 clustered plants covering every
//! behavior template on every protocol, plus 20 aliased /64s.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use v6iot::addr::{Addr128, Prefix};
use v6iot::harness::{
    build_universe, AddressSpec, Behavior, ClusterSpec, DeploymentSpec, GroundTruth, PlantTemplate, Universe,
    UniverseSpec, Weakness,
};
use v6iot::model::Protocol;

pub const CLUSTERS: u16 = 49;
pub const PER_CLUSTER: usize = 20;
pub const ALIASED: u16 = 20;

pub fn behavior_sets() -> Vec<Vec<Behavior>> {
    use Behavior::*;
    vec![
        vec![ValidPlain],
        vec![ValidTls],
        vec![ValidPlain, ValidTls],
        vec![TlsOnStandardPort],
        vec![GarbageTransport],
        vec![NonIoTService],
        vec![NonIoTService, TlsOnStandardPort],
        vec![ValidPlain, AnonymousOpen],
        vec![ValidPlain, ValidTls, AuthRequired],
        vec![ValidTls, WeakTls(Weakness::Sha1)],
        vec![ValidPlain, ValidTls, WeakTls(Weakness::ShortKey)],
        vec![ValidTls, WeakTls(Weakness::InsecureSuite)],
        vec![ValidTls, Tls13, AnonymousOpen],
        vec![TlsOnStandardPort, WeakTls(Weakness::Sha1), WeakTls(Weakness::ShortKey), AuthRequired],
    ]
}

fn addr(s: &str) -> Addr128 {
    s.parse().expect("literal address")
}

/// Every template appears on every listed protocol; each cluster starts
/// where the previous one stopped so the templates spread evenly.
pub fn spec(rng_seed: u64, protocols: &[Protocol]) -> UniverseSpec {
    let templates: Vec<PlantTemplate> = protocols
        .iter()
        .flat_map(|&protocol| behavior_sets().into_iter().map(move |behaviors| PlantTemplate { protocol, behaviors }))
        .collect();
    let mut spec = UniverseSpec::new(rng_seed);
    for i in 0..CLUSTERS {
        let mut t = templates.clone();
        t.rotate_left((i as usize * PER_CLUSTER) % templates.len());
        spec.clusters.push(ClusterSpec {
            prefix: format!("2001:db8:c:{i:x}::/64").parse().expect("cluster prefix"),
            density: 0.5,
            count: PER_CLUSTER,
            templates: t,
        });
    }
    for j in 0..ALIASED {
        let prefix: Prefix = format!("2001:db8:a:{j:x}::/64").parse().expect("alias prefix");
        let mut behaviors = vec![Behavior::ValidPlain, Behavior::AliasedSubnet(prefix)];
        if j % 2 == 1 {
            behaviors.push(Behavior::ValidTls);
        }
        spec.deployments.push(DeploymentSpec {
            address: AddressSpec::Fixed(addr(&format!("2001:db8:a:{j:x}::1"))),
            protocol: protocols[j as usize % protocols.len()],
            behaviors,
        });
    }
    spec
}

pub fn build(rng_seed: u64, protocols: &[Protocol]) -> (Universe, GroundTruth) {
    build_universe(&spec(rng_seed, protocols)).expect("valid universe")
}

/// Addresses nothing is planted at.
pub fn unplanted(n: u16) -> Vec<Addr128> {
    (1..=n).map(|i| addr(&format!("2001:db8:e::{i:x}"))).collect()
}

pub fn planted(truth: &GroundTruth) -> Vec<Addr128> {
    let mut v: Vec<Addr128> = truth.records().iter().map(|r| r.address).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Writes the universe, a hitlist of every planted address plus `extra`,
/// and a campaign config into `dir`; returns the config path.
pub fn write_campaign(dir: &Path, rng_seed: u64, protocols: &[Protocol], extra: &[Addr128], output: &str) -> std::path::PathBuf {
    let spec = spec(rng_seed, protocols);
    let (_, truth) = build_universe(&spec).expect("valid universe");
    fs::write(dir.join("universe.json"), serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let mut hitlist = String::new();
    for a in planted(&truth).iter().chain(extra) {
        hitlist.push_str(&format!("{a}\n"));
    }
    fs::write(dir.join("hitlist.txt"), hitlist).unwrap();
    let cfg = serde_json::json!({
        "seeds": [{"kind": "hitlist", "source": "TUM", "path": "hitlist.txt"}],
        "generators": [
            {"name": "fill", "technique": "DensityFillUp", "seed_source": "TUM", "budget": 400, "min_density": 0.1},
            {"name": "entropy", "technique": "EntropyModel", "seed_source": "TUM", "budget": 200},
            {"name": "partition", "technique": "ActivePartition", "seed_source": "TUM", "budget": 200, "rounds": 2}
        ],
        "harness": "universe.json",
        "output_dir": output,
        "rng_seed": rng_seed,
    });
    let path = dir.join(format!("{output}.json"));
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}
