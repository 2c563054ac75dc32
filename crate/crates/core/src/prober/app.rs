//! First application-layer exchanges per protocol.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::Protocol;
use crate::proto::amqp::{self, Method};
use crate::proto::coap::{self, MsgType};
use crate::proto::mqtt::{self, Connack, ConnackAccess, Connect};
use crate::proto::opcua::{Hello, Message};

use super::channel::{Channel, ChannelError};
use super::{AppMeta, AppStatus, ProberConfig, Target};

fn failed(e: ChannelError) -> AppStatus {
    match e {
        ChannelError::Silence => AppStatus::Timeout,
        ChannelError::Closed => AppStatus::Invalid { reason: "connection closed".into() },
        ChannelError::Faulty => AppStatus::Invalid { reason: "faulty datagram".into() },
        ChannelError::CapReached => AppStatus::Invalid { reason: "session cap reached".into() },
        ChannelError::Tls(f) => AppStatus::Invalid { reason: f.to_string() },
    }
}

fn invalid(e: impl std::fmt::Display) -> AppStatus {
    AppStatus::Invalid { reason: e.to_string() }
}

fn client_id(target: &Target) -> String {
    format!("v6iot-{:08x}", (target.address.0 as u32) ^ target.spec.port() as u32)
}

fn endpoint_url(target: &Target) -> String {
    format!("opc.tcp://[{}]:{}", target.address, target.spec.port())
}

pub(crate) fn app_handshake(ch: &mut Channel, target: &Target, cfg: &ProberConfig) -> AppStatus {
    match target.spec.protocol() {
        Protocol::Mqtt => mqtt_connect(ch, target, cfg).map_or_else(|s| s, |c| {
            AppStatus::Valid(AppMeta::Mqtt {
                protocol_level: c.level,
                return_code: c.code,
                access: c.access(),
            })
        }),
        Protocol::Amqp => amqp_start(ch, cfg).map_or_else(|s| s, |start| {
            AppStatus::Valid(AppMeta::Amqp {
                version: format!("{}-{}", start.version.0, start.version.1),
                mechanisms: start.mechanisms,
                server_properties: start.server_properties,
            })
        }),
        Protocol::OpcUa => opcua(ch, target, cfg),
        Protocol::Coap => coap(ch, target, cfg),
    }
}

fn mqtt_connect(ch: &mut Channel, target: &Target, cfg: &ProberConfig) -> Result<Connack, AppStatus> {
    let connect = Connect::anonymous(&client_id(target), cfg.contact.as_deref()).encode();
    let reply = ch.roundtrip(&connect, cfg.app_timeout).map_err(failed)?;
    Connack::decode(&reply).map_err(invalid)
}

fn amqp_start(ch: &mut Channel, cfg: &ProberConfig) -> Result<amqp::Start, AppStatus> {
    let reply = ch.roundtrip(&amqp::PROTOCOL_HEADER, cfg.app_timeout).map_err(failed)?;
    match Method::decode(&reply) {
        Ok((Method::Start(s), _)) if s.version == (0, 9) => Ok(s),
        Ok((Method::Start(s), _)) => Err(invalid(format!("AMQP version {}-{}", s.version.0, s.version.1))),
        Ok((other, _)) => Err(invalid(format!("expected Connection.Start, got {other:?}"))),
        Err(e) => Err(invalid(e)),
    }
}

fn opcua(ch: &mut Channel, target: &Target, cfg: &ProberConfig) -> AppStatus {
    let url = endpoint_url(target);
    let reply = match ch.roundtrip(&Message::Hello(Hello::new(&url)).encode(), cfg.app_timeout) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    match Message::decode(&reply) {
        Ok(Message::Acknowledge(_)) => {}
        Ok(Message::Error { code, reason }) => return invalid(format!("ERR {code:#x}: {reason}")),
        Ok(other) => return invalid(format!("expected Acknowledge, got {other:?}")),
        Err(e) => return invalid(e),
    }
    AppStatus::Valid(AppMeta::OpcUa {
        endpoints: opcua_endpoints(ch, &url, cfg).unwrap_or_default(),
    })
}

/// Endpoint capture after a successful Hello; failures leave the list empty.
fn opcua_endpoints(ch: &mut Channel, url: &str, cfg: &ProberConfig) -> Option<Vec<crate::proto::opcua::Endpoint>> {
    let reply = ch.roundtrip(&Message::OpenRequest { request_id: 1 }.encode(), cfg.app_timeout).ok()?;
    let Ok(Message::OpenResponse { channel_id, token_id }) = Message::decode(&reply) else {
        return None;
    };
    let req = Message::GetEndpointsRequest {
        channel_id,
        token_id,
        request_id: 2,
        endpoint_url: url.to_string(),
    };
    let reply = ch.roundtrip(&req.encode(), cfg.app_timeout).ok()?;
    match Message::decode(&reply) {
        Ok(Message::GetEndpointsResponse { endpoints }) => Some(endpoints),
        _ => None,
    }
}

fn coap(ch: &mut Channel, target: &Target, cfg: &ProberConfig) -> AppStatus {
    let mid = (target.address.0 as u16) ^ 0x5a5a;
    let token = (target.address.0 as u32).to_be_bytes();
    let req = coap::Message::get_well_known_core(mid, &token);
    let reply = match ch.roundtrip(&req.encode(), cfg.app_timeout) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let resp = match coap::Message::decode(&reply) {
        Ok(m) => m,
        Err(e) => return invalid(e),
    };
    let piggybacked = resp.mtype == MsgType::Acknowledgement && resp.message_id == mid;
    let separate = matches!(resp.mtype, MsgType::Confirmable | MsgType::NonConfirmable);
    if !(piggybacked || separate) || resp.token != token || !(2..=5).contains(&resp.code.0) {
        return invalid(format!("unexpected CoAP reply {:?} {}.{:02}", resp.mtype, resp.code.0, resp.code.1));
    }
    AppStatus::Valid(AppMeta::Coap {
        response_code: format!("{}.{:02}", resp.code.0, resp.code.1),
        resources: coap::parse_link_format(&resp.payload),
    })
}

/// Outcome of a credential-free login attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessProbe {
    /// Only a count of visible topics is kept, never message contents.
    Anonymous { visible_topics: Option<u32> },
    AuthRequired { detail: String },
    Indeterminate { reason: String },
}

fn indeterminate(s: AppStatus) -> AccessProbe {
    AccessProbe::Indeterminate {
        reason: match s {
            AppStatus::Invalid { reason } => reason,
            other => format!("{other:?}"),
        },
    }
}

/// Credential-free CONNECT; on acceptance subscribes to `#` and counts
/// the distinct topics of retained messages delivered in reply.
pub fn mqtt_visible_topics(ch: &mut Channel, target: &Target, cfg: &ProberConfig) -> AccessProbe {
    let connack = match mqtt_connect(ch, target, cfg) {
        Ok(c) => c,
        Err(s) => return indeterminate(s),
    };
    match connack.access() {
        ConnackAccess::Accepted => {}
        ConnackAccess::AuthRequired => {
            return AccessProbe::AuthRequired { detail: format!("CONNACK code {:#04x}", connack.code) }
        }
        ConnackAccess::Refused => {
            return AccessProbe::Indeterminate { reason: format!("CONNACK code {:#04x}", connack.code) }
        }
    }
    let sub = mqtt::encode_subscribe(connack.level, 1, "#");
    let visible_topics = ch.roundtrip(&sub, cfg.app_timeout).ok().and_then(|reply| {
        let packets = mqtt::split_packets(&reply).ok()?;
        let topics: BTreeSet<String> = packets.iter().filter_map(|p| mqtt::publish_topic(p).ok()).collect();
        Some(topics.len() as u32)
    });
    AccessProbe::Anonymous { visible_topics }
}

/// Tries the ANONYMOUS SASL mechanism if the broker offers it. Tune means
/// the login went through; Close or no ANONYMOUS offer means credentials
/// are required.
pub fn amqp_anonymous_login(ch: &mut Channel, cfg: &ProberConfig) -> AccessProbe {
    let start = match amqp_start(ch, cfg) {
        Ok(s) => s,
        Err(s) => return indeterminate(s),
    };
    if !start.mechanisms.iter().any(|m| m == "ANONYMOUS") {
        return AccessProbe::AuthRequired {
            detail: format!("mechanisms offered: {}", start.mechanisms.join(" ")),
        };
    }
    let reply = match ch.roundtrip(&amqp::anonymous_start_ok(cfg.contact.as_deref()).encode(), cfg.app_timeout) {
        Ok(r) => r,
        Err(e) => return indeterminate(failed(e)),
    };
    match Method::decode(&reply) {
        Ok((Method::Tune { .. }, _)) => AccessProbe::Anonymous { visible_topics: None },
        Ok((Method::Close { reply_code, reply_text }, _)) => AccessProbe::AuthRequired {
            detail: format!("Connection.Close {reply_code} {reply_text}"),
        },
        Ok((other, _)) => AccessProbe::Indeterminate { reason: format!("unexpected {other:?}") },
        Err(e) => AccessProbe::Indeterminate { reason: e.to_string() },
    }
}
