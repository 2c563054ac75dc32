//! Transport and application-layer probing under politeness constraints.

mod app;
mod campaign;
mod channel;
pub mod dispatch;
pub mod net;
pub mod politeness;
mod probe;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::addr::Addr128;
use crate::clock::{self, SimTime};
use crate::model::ProtocolSpec;
use crate::proto::amqp::FieldTable;
use crate::proto::cert::CertSummary;
use crate::proto::mqtt::ConnackAccess;
use crate::proto::opcua::Endpoint;
use crate::proto::suites;

pub use app::{amqp_anonymous_login, mqtt_visible_topics, AccessProbe};
pub use campaign::Campaign;
pub use channel::{Channel, ChannelError};
pub use dispatch::{Connect, Dispatcher, Exchange, Reply, Session};
pub use politeness::{
    audit_host_gaps, audit_peak_rate, schedule_batch, Arbiter, GapViolation, HandshakeGrant, PlannedProbe,
    PolitenessPolicy, Purpose,
};
pub use probe::Prober;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Target {
    pub address: Addr128,
    pub spec: ProtocolSpec,
}

impl Target {
    pub fn new(address: Addr128, spec: ProtocolSpec) -> Self {
        Target { address, spec }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransportStatus {
    Established,
    Refused,
    Timeout,
    FaultyTransport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsParams {
    pub version: String,
    pub suite: u16,
    pub suite_name: String,
    pub certificate: Option<CertSummary>,
}

impl TlsParams {
    pub fn new(version: u16, suite: u16, certificate: Option<CertSummary>) -> Self {
        TlsParams {
            version: crate::proto::tls::version_name(version),
            suite,
            suite_name: suites::label(suite),
            certificate,
        }
    }

    pub fn is_tls13(&self) -> bool {
        self.version.ends_with("v1.3")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TlsStatus {
    NotAttempted,
    Completed(TlsParams),
    Failed { reason: String },
}

impl TlsStatus {
    pub fn params(&self) -> Option<&TlsParams> {
        match self {
            TlsStatus::Completed(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, TlsStatus::Completed(_))
    }
}

/// Metadata captured from a protocol-conformant first exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AppMeta {
    Mqtt {
        protocol_level: u8,
        return_code: u8,
        access: ConnackAccess,
    },
    Amqp {
        version: String,
        mechanisms: Vec<String>,
        server_properties: FieldTable,
    },
    OpcUa {
        endpoints: Vec<Endpoint>,
    },
    Coap {
        response_code: String,
        resources: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AppStatus {
    NotAttempted,
    Valid(AppMeta),
    Invalid { reason: String },
    Timeout,
}

impl AppStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, AppStatus::Valid(_))
    }

    pub fn meta(&self) -> Option<&AppMeta> {
        match self {
            AppStatus::Valid(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub target: Target,
    pub timestamp: SimTime,
    pub transport: TransportStatus,
    pub tls: TlsStatus,
    pub app: AppStatus,
    pub bytes_exchanged: u64,
    /// The application answered inside (D)TLS on the standard port.
    #[serde(default)]
    pub tls_on_standard_port: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_timestamp: Option<SimTime>,
}

impl ProbeOutcome {
    /// Whether the standard-port (D)TLS retry applies to this outcome.
    pub fn wants_tls_fallback(&self) -> bool {
        !self.target.spec.is_secured()
            && self.transport == TransportStatus::Established
            && !self.app.is_valid()
            && self.fallback_timestamp.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProberConfig {
    #[serde(with = "clock::duration_secs")]
    pub transport_timeout: Duration,
    #[serde(with = "clock::duration_secs")]
    pub app_timeout: Duration,
    /// Contact URI placed in protocol fields that can carry it.
    pub contact: Option<String>,
    /// Cipher suites offered in validation handshakes (IANA codes).
    pub offer: Vec<u16>,
}

impl Default for ProberConfig {
    fn default() -> Self {
        ProberConfig {
            transport_timeout: Duration::from_secs(5),
            app_timeout: Duration::from_secs(10),
            contact: None,
            offer: suites::default_offer(),
        }
    }
}
