use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::addr::{Addr128, Prefix};
use crate::clock;
use crate::model::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Weakness {
    Sha1,
    ShortKey,
    InsecureSuite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Behavior {
    /// The application answers in plaintext on the standard port.
    ValidPlain,
    /// The application answers inside (D)TLS on the secure port.
    ValidTls,
    /// The standard port only speaks (D)TLS.
    TlsOnStandardPort,
    /// Transport replies are malformed on both ports.
    GarbageTransport,
    /// An unrelated (web) service answers instead of the IoT protocol.
    NonIoTService,
    /// Every address in the prefix answers like the planted one.
    AliasedSubnet(Prefix),
    AnonymousOpen,
    AuthRequired,
    WeakTls(Weakness),
    Tls13,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressSpec {
    Auto,
    Fixed(Addr128),
}

impl fmt::Display for AddressSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressSpec::Auto => f.write_str("auto"),
            AddressSpec::Fixed(a) => a.fmt(f),
        }
    }
}

impl FromStr for AddressSpec {
    type Err = crate::addr::AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(AddressSpec::Auto)
        } else {
            s.parse().map(AddressSpec::Fixed)
        }
    }
}

impl Serialize for AddressSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AddressSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Protocol and behaviors shared by a group of plants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantTemplate {
    pub protocol: Protocol,
    pub behaviors: Vec<Behavior>,
}

/// `count` plants spread over the first `count / density` addresses of
/// `prefix`. Templates are assigned round-robin in address order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub prefix: Prefix,
    pub density: f64,
    pub count: usize,
    pub templates: Vec<PlantTemplate>,
}

impl ClusterSpec {
    /// Number of leading addresses of the prefix the plants are drawn from.
    pub fn region_size(&self) -> u128 {
        ((self.count as f64 / self.density).round() as u128).max(self.count as u128)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub address: AddressSpec,
    pub protocol: Protocol,
    pub behaviors: Vec<Behavior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseSpec {
    pub rng_seed: u64,
    #[serde(default)]
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub deployments: Vec<DeploymentSpec>,
    /// Names answered by the mock resolver.
    #[serde(default)]
    pub domains: BTreeMap<String, Vec<Addr128>>,
    /// Where `auto` deployments are placed.
    #[serde(default = "default_auto_prefix")]
    pub auto_prefix: Prefix,
    #[serde(default = "default_latency", with = "clock::duration_secs")]
    pub latency: Duration,
}

fn default_auto_prefix() -> Prefix {
    "2001:db8:ffff::/48".parse().expect("valid prefix")
}

fn default_latency() -> Duration {
    Duration::from_millis(20)
}

impl UniverseSpec {
    pub fn new(rng_seed: u64) -> Self {
        UniverseSpec {
            rng_seed,
            clusters: Vec::new(),
            deployments: Vec::new(),
            domains: BTreeMap::new(),
            auto_prefix: default_auto_prefix(),
            latency: default_latency(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("address {0} is planted more than once")]
    DuplicatePlantedAddress(Addr128),
    #[error("invalid behavior set for {address} ({protocol}): {reason}")]
    InvalidBehavior {
        address: String,
        protocol: Protocol,
        reason: String,
    },
    #[error("cluster {prefix}: {reason}")]
    InvalidCluster { prefix: Prefix, reason: String },
    #[error("auto prefix {0} has no room left")]
    AutoPrefixExhausted(Prefix),
    #[error("reading universe spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing universe spec: {0}")]
    Json(#[from] serde_json::Error),
}

/// A validated behavior set, flattened for the responders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlantFlags {
    pub plain: bool,
    pub tls_secure: bool,
    pub tls_standard: bool,
    pub garbage: bool,
    pub non_iot: bool,
    pub alias: Option<Prefix>,
    pub anonymous: bool,
    pub tls13: bool,
    pub sha1: bool,
    pub short_key: bool,
    pub insecure_suite: bool,
}

impl PlantFlags {
    pub fn speaks_tls(&self) -> bool {
        self.tls_secure || self.tls_standard
    }

    pub fn weak(&self) -> bool {
        self.sha1 || self.short_key || self.insecure_suite
    }

    /// Checks that the behaviors compose; rejected combinations name the
    /// conflict.
    pub fn from_behaviors(address: Addr128, behaviors: &[Behavior]) -> Result<Self, String> {
        let mut f = PlantFlags::default();
        let mut auth = false;
        for b in behaviors {
            match *b {
                Behavior::ValidPlain => f.plain = true,
                Behavior::ValidTls => f.tls_secure = true,
                Behavior::TlsOnStandardPort => f.tls_standard = true,
                Behavior::GarbageTransport => f.garbage = true,
                Behavior::NonIoTService => f.non_iot = true,
                Behavior::AliasedSubnet(p) => {
                    if !p.contains(address) {
                        return Err(format!("alias prefix {p} does not contain the planted address"));
                    }
                    f.alias = Some(p);
                }
                Behavior::AnonymousOpen => f.anonymous = true,
                Behavior::AuthRequired => auth = true,
                Behavior::WeakTls(Weakness::Sha1) => f.sha1 = true,
                Behavior::WeakTls(Weakness::ShortKey) => f.short_key = true,
                Behavior::WeakTls(Weakness::InsecureSuite) => f.insecure_suite = true,
                Behavior::Tls13 => f.tls13 = true,
            }
        }
        if !(f.plain || f.tls_secure || f.tls_standard || f.garbage || f.non_iot) {
            return Err("no service behavior".into());
        }
        if f.garbage && behaviors.iter().any(|b| !matches!(b, Behavior::GarbageTransport | Behavior::AliasedSubnet(_))) {
            return Err("GarbageTransport excludes every other service behavior".into());
        }
        if f.plain && f.tls_standard {
            return Err("the standard port cannot be both plaintext and (D)TLS".into());
        }
        if f.non_iot && (f.plain || f.tls_secure) {
            return Err("NonIoTService conflicts with a valid IoT service".into());
        }
        if f.anonymous && auth {
            return Err("AnonymousOpen and AuthRequired are exclusive".into());
        }
        if (f.weak() || f.tls13) && !f.speaks_tls() {
            return Err("WeakTls and Tls13 need a (D)TLS service".into());
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_shape() {
        let text = r#"{
            "rng_seed": 7,
            "clusters": [{"prefix": "2001:db8:1::/120", "density": 0.5, "count": 10,
                          "templates": [{"protocol": "MQTT", "behaviors": ["ValidPlain", {"WeakTls": "Sha1"}, "ValidTls"]}]}],
            "deployments": [{"address": "auto", "protocol": "AMQP", "behaviors": ["ValidPlain", "AnonymousOpen"]},
                            {"address": "2001:db8::5", "protocol": "COAP",
                             "behaviors": ["ValidPlain", {"AliasedSubnet": "2001:db8::/64"}]}],
            "domains": {"broker.example": ["2001:db8::5"]}
        }"#;
        let spec: UniverseSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.clusters[0].region_size(), 20);
        assert_eq!(spec.deployments[0].address, AddressSpec::Auto);
        assert_eq!(spec.latency, Duration::from_millis(20));
        let back: UniverseSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn behavior_conflicts() {
        let a: Addr128 = "2001:db8::1".parse().unwrap();
        use Behavior::*;
        assert!(PlantFlags::from_behaviors(a, &[ValidPlain, ValidTls, WeakTls(Weakness::ShortKey)]).is_ok());
        assert!(PlantFlags::from_behaviors(a, &[TlsOnStandardPort, NonIoTService]).is_ok());
        assert!(PlantFlags::from_behaviors(a, &[ValidPlain, TlsOnStandardPort]).is_err());
        assert!(PlantFlags::from_behaviors(a, &[GarbageTransport, AnonymousOpen]).is_err());
        assert!(PlantFlags::from_behaviors(a, &[ValidPlain, Tls13]).is_err());
        assert!(PlantFlags::from_behaviors(a, &[AnonymousOpen]).is_err());
        assert!(PlantFlags::from_behaviors(a, &[ValidPlain, AnonymousOpen, AuthRequired]).is_err());
        let p: Prefix = "2001:db9::/64".parse().unwrap();
        assert!(PlantFlags::from_behaviors(a, &[ValidPlain, AliasedSubnet(p)]).is_err());
    }
}
