//! Shared vocabulary: where addresses came from and what we probe them for.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::Addr128;

/// The address sources a seedlist can be built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeedSource {
    #[serde(rename = "TUM")]
    TumHitlist,
    #[serde(rename = "TUM-open")]
    TumOpen,
    #[serde(rename = "DNS")]
    DnsZone,
    #[serde(rename = "DNS-www")]
    DnsZoneWww,
    #[serde(rename = "v4")]
    V4Derived,
}

impl SeedSource {
    pub const ALL: [SeedSource; 5] = [
        SeedSource::TumHitlist,
        SeedSource::TumOpen,
        SeedSource::DnsZone,
        SeedSource::DnsZoneWww,
        SeedSource::V4Derived,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SeedSource::TumHitlist => "TUM",
            SeedSource::TumOpen => "TUM-open",
            SeedSource::DnsZone => "DNS",
            SeedSource::DnsZoneWww => "DNS-www",
            SeedSource::V4Derived => "v4",
        }
    }
}

impl fmt::Display for SeedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SeedSource {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SeedSource::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown name {0:?}")]
pub struct UnknownName(pub String);

/// Origin of an address: a seed source directly, or a generator run fed
/// from a seed source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceTag {
    Seed(SeedSource),
    Generator {
        generator: String,
        seed_source: SeedSource,
    },
}

impl SourceTag {
    pub fn generator(name: impl Into<String>, seed_source: SeedSource) -> Self {
        SourceTag::Generator {
            generator: name.into(),
            seed_source,
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self, SourceTag::Generator { .. })
    }

    pub fn seed_source(&self) -> SeedSource {
        match self {
            SourceTag::Seed(s) => *s,
            SourceTag::Generator { seed_source, .. } => *seed_source,
        }
    }
}

impl From<SeedSource> for SourceTag {
    fn from(s: SeedSource) -> Self {
        SourceTag::Seed(s)
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTag::Seed(s) => write!(f, "{}", s),
            SourceTag::Generator {
                generator,
                seed_source,
            } => write!(f, "{}@{}", generator, seed_source),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "AMQP")]
    Amqp,
    #[serde(rename = "MQTT")]
    Mqtt,
    #[serde(rename = "OPCUA")]
    OpcUa,
    #[serde(rename = "COAP")]
    Coap,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Amqp, Protocol::Mqtt, Protocol::OpcUa, Protocol::Coap];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Amqp => "AMQP",
            Protocol::Mqtt => "MQTT",
            Protocol::OpcUa => "OPCUA",
            Protocol::Coap => "COAP",
        }
    }

    pub fn transport(self) -> Transport {
        match self {
            Protocol::Coap => Transport::DatagramUdp,
            _ => Transport::StreamTcp,
        }
    }

    pub fn standard_port(self) -> u16 {
        match self {
            Protocol::Amqp => 5672,
            Protocol::Mqtt => 1883,
            Protocol::OpcUa => 4840,
            Protocol::Coap => 5683,
        }
    }

    pub fn secure_port(self) -> u16 {
        match self {
            Protocol::Amqp => 5671,
            Protocol::Mqtt => 8883,
            Protocol::OpcUa => 4843,
            Protocol::Coap => 5684,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace(['-', '_', ' '], "");
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Standard,
    SecuredTransport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Transport {
    StreamTcp,
    DatagramUdp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolSpecError {
    #[error("port {port} is not a {protocol} port")]
    PortMismatch { protocol: Protocol, port: u16 },
    #[error("inconsistent protocol spec {0}")]
    Inconsistent(String),
}

/// One scanned (protocol, port) combination. Port, variant and transport
/// are derived from each other, so every value of this type is consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ProtocolSpecRepr", into = "ProtocolSpecRepr")]
pub struct ProtocolSpec {
    protocol: Protocol,
    variant: Variant,
}

impl ProtocolSpec {
    pub const fn new(protocol: Protocol, variant: Variant) -> Self {
        ProtocolSpec { protocol, variant }
    }

    pub fn standard(protocol: Protocol) -> Self {
        Self::new(protocol, Variant::Standard)
    }

    pub fn secured(protocol: Protocol) -> Self {
        Self::new(protocol, Variant::SecuredTransport)
    }

    pub fn from_port(protocol: Protocol, port: u16) -> Result<Self, ProtocolSpecError> {
        if port == protocol.standard_port() {
            Ok(Self::standard(protocol))
        } else if port == protocol.secure_port() {
            Ok(Self::secured(protocol))
        } else {
            Err(ProtocolSpecError::PortMismatch { protocol, port })
        }
    }

    /// Both ports of every protocol.
    pub fn all() -> Vec<ProtocolSpec> {
        Protocol::ALL
            .into_iter()
            .flat_map(|p| [Self::standard(p), Self::secured(p)])
            .collect()
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn transport(&self) -> Transport {
        self.protocol.transport()
    }

    pub fn port(&self) -> u16 {
        match self.variant {
            Variant::Standard => self.protocol.standard_port(),
            Variant::SecuredTransport => self.protocol.secure_port(),
        }
    }

    pub fn is_secured(&self) -> bool {
        self.variant == Variant::SecuredTransport
    }

    /// The other port of the same protocol.
    pub fn sibling(&self) -> ProtocolSpec {
        match self.variant {
            Variant::Standard => Self::secured(self.protocol),
            Variant::SecuredTransport => Self::standard(self.protocol),
        }
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.protocol, self.port())
    }
}

impl FromStr for ProtocolSpec {
    type Err = String;

    /// Parses `MQTT/1883` style text.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (proto, port) = s
            .split_once('/')
            .ok_or_else(|| format!("expected PROTOCOL/PORT, got {s:?}"))?;
        let proto: Protocol = proto.parse().map_err(|e: UnknownName| e.to_string())?;
        let port: u16 = port.parse().map_err(|_| format!("bad port in {s:?}"))?;
        ProtocolSpec::from_port(proto, port).map_err(|e| e.to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct ProtocolSpecRepr {
    protocol: Protocol,
    port: u16,
    #[serde(default)]
    variant: Option<Variant>,
    #[serde(default)]
    transport: Option<Transport>,
}

impl From<ProtocolSpec> for ProtocolSpecRepr {
    fn from(p: ProtocolSpec) -> Self {
        ProtocolSpecRepr {
            protocol: p.protocol,
            port: p.port(),
            variant: Some(p.variant),
            transport: Some(p.transport()),
        }
    }
}

impl TryFrom<ProtocolSpecRepr> for ProtocolSpec {
    type Error = ProtocolSpecError;

    fn try_from(r: ProtocolSpecRepr) -> Result<Self, Self::Error> {
        let spec = ProtocolSpec::from_port(r.protocol, r.port)?;
        if r.variant.is_some_and(|v| v != spec.variant)
            || r.transport.is_some_and(|t| t != spec.transport())
        {
            return Err(ProtocolSpecError::Inconsistent(format!(
                "{}/{}",
                r.protocol, r.port
            )));
        }
        Ok(spec)
    }
}

/// An address together with every origin that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenancedAddress {
    pub address: Addr128,
    pub origins: BTreeSet<SourceTag>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aliased: bool,
}

impl ProvenancedAddress {
    pub fn new(address: Addr128, origin: SourceTag) -> Self {
        ProvenancedAddress {
            address,
            origins: BTreeSet::from([origin]),
            aliased: false,
        }
    }

    pub fn merge(&mut self, other: &ProvenancedAddress) {
        debug_assert_eq!(self.address, other.address);
        self.origins.extend(other.origins.iter().cloned());
        self.aliased |= other.aliased;
    }
}
