//! Scripted server side of every planted deployment.

use std::sync::Arc;
use std::time::Duration;

use crate::addr::Addr128;
use crate::model::{Protocol, Transport};
use crate::prober::dispatch::{udp_datagram, Exchange, Reply, Session};
use crate::proto::amqp::{self, FieldTable, FieldValue, Method};
use crate::proto::cert::CertSummary;
use crate::proto::coap::{self, MsgType};
use crate::proto::mqtt::{self, Connack, Connect};
use crate::proto::opcua::{self, Acknowledge, Endpoint, Message, SecurityMode, UserTokenType};
use crate::proto::tls::{self, ClientHello, Flavor, ServerHello};

use super::spec::{Behavior, PlantFlags};

const TLS12_SUITES: [u16; 5] = [0xc02f, 0xc030, 0xc02b, 0x009c, 0x002f];
const DTLS12_SUITES: [u16; 3] = [0xc0ae, 0xc02b, 0xc02f];
const TLS13_SUITES: [u16; 3] = [0x1301, 0x1302, 0x1303];
const RC4_128_SHA: u16 = 0x0005;
const DES3_EDE_CBC_SHA: u16 = 0x000a;

const CLIENT_PORT: u16 = 49_152;
const OPCUA_BAD_MESSAGE_TYPE: u32 = 0x807e_0000;
const OPCUA_BAD_SERVICE_UNSUPPORTED: u32 = 0x800b_0000;

const HTTP_400: &[u8] =
    b"HTTP/1.1 400 Bad Request\r\nServer: nginx\r\nContent-Type: text/html\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
const SSDP_NOTIFY: &[u8] =
    b"NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nNT: upnp:rootdevice\r\nNTS: ssdp:alive\r\n\r\n";

/// One planted deployment and everything its responders need.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub index: usize,
    pub address: Addr128,
    pub protocol: Protocol,
    pub behaviors: Vec<Behavior>,
    pub flags: PlantFlags,
    pub certificate: Option<CertSummary>,
    /// Retained MQTT topics visible after an anonymous login.
    pub topics: Vec<String>,
    /// AMQP brokers requiring credentials either hide ANONYMOUS or offer
    /// it and then refuse the login.
    pub amqp_offers_anonymous: bool,
    pub coap_resources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum App {
    Iot,
    Web,
}

/// What listens on one port of a planted host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Service {
    Closed,
    Faulty,
    Plain(App),
    Tls(App),
}

impl Plant {
    pub fn service(&self, protocol: Protocol, port: u16) -> Service {
        let f = &self.flags;
        if protocol != self.protocol {
            return Service::Closed;
        }
        let app = if f.non_iot { App::Web } else { App::Iot };
        if port == protocol.standard_port() {
            if f.garbage {
                Service::Faulty
            } else if f.tls_standard {
                Service::Tls(app)
            } else if f.plain || f.non_iot {
                Service::Plain(app)
            } else {
                Service::Closed
            }
        } else if port == protocol.secure_port() {
            if f.garbage {
                Service::Faulty
            } else if f.tls_secure {
                Service::Tls(App::Iot)
            } else {
                Service::Closed
            }
        } else {
            Service::Closed
        }
    }

    fn tls12_suites(&self, flavor: Flavor) -> Vec<u16> {
        let mut s = match flavor {
            Flavor::Stream => TLS12_SUITES.to_vec(),
            Flavor::Datagram => DTLS12_SUITES.to_vec(),
        };
        if self.flags.insecure_suite {
            if flavor == Flavor::Stream {
                s.push(RC4_128_SHA);
            }
            s.push(DES3_EDE_CBC_SHA);
        }
        s
    }

    /// Server-preference negotiation; the error is the alert to send.
    pub fn negotiate(&self, flavor: Flavor, hello: &ClientHello) -> Result<ServerHello, u8> {
        if self.flags.tls13 && hello.versions.contains(&flavor.v13()) {
            if let Some(&suite) = TLS13_SUITES.iter().find(|s| hello.suites.contains(s)) {
                return Ok(ServerHello { version: flavor.v13(), suite });
            }
        }
        if !hello.versions.contains(&flavor.legacy_version()) {
            return Err(tls::ALERT_PROTOCOL_VERSION);
        }
        self.tls12_suites(flavor)
            .into_iter()
            .find(|s| hello.suites.contains(s))
            .map(|suite| ServerHello { version: flavor.legacy_version(), suite })
            .ok_or(tls::ALERT_HANDSHAKE_FAILURE)
    }

    fn endpoint_url(&self) -> String {
        format!("opc.tcp://[{}]:{}", self.address, self.protocol.standard_port())
    }

    pub fn endpoints(&self) -> Vec<Endpoint> {
        let tokens = if self.flags.anonymous {
            vec![UserTokenType::Anonymous, UserTokenType::UserName]
        } else {
            vec![UserTokenType::UserName, UserTokenType::Certificate]
        };
        let mut eps = vec![Endpoint {
            url: self.endpoint_url(),
            application_uri: format!("urn:plant:{}:opcua", self.index),
            application_name: format!("PLC {}", self.index),
            security_mode: SecurityMode::None,
            security_policy: opcua::SECURITY_POLICY_NONE.to_string(),
            token_types: tokens.clone(),
            security_level: 0,
        }];
        if self.flags.speaks_tls() {
            eps.push(Endpoint {
                security_mode: SecurityMode::SignAndEncrypt,
                security_policy: "http://opcfoundation.org/UA/SecurityPolicy#Basic256Sha256".to_string(),
                security_level: 3,
                ..eps[0].clone()
            });
        }
        eps
    }

    fn amqp_mechanisms(&self) -> Vec<String> {
        let m: &[&str] = if self.flags.anonymous || self.amqp_offers_anonymous {
            &["PLAIN", "AMQPLAIN", "ANONYMOUS"]
        } else {
            &["EXTERNAL"]
        };
        m.iter().map(|s| s.to_string()).collect()
    }

    fn amqp_start(&self) -> Method {
        let mut caps = FieldTable::new();
        caps.insert("publisher_confirms".into(), FieldValue::Bool(true));
        caps.insert("authentication_failure_close".into(), FieldValue::Bool(true));
        let mut props = FieldTable::new();
        props.insert("product".into(), FieldValue::Str("RabbitMQ".into()));
        props.insert("version".into(), FieldValue::Str(format!("3.{}.{}", 8 + self.index % 5, self.index % 13)));
        props.insert("platform".into(), FieldValue::Str("Erlang/OTP 25.3".into()));
        props.insert("capabilities".into(), FieldValue::Table(caps));
        Method::Start(amqp::Start {
            version: (0, 9),
            server_properties: props,
            mechanisms: self.amqp_mechanisms(),
            locales: vec!["en_US".into()],
        })
    }

    fn link_format(&self) -> Vec<u8> {
        self.coap_resources
            .iter()
            .map(|r| format!("<{r}>;ct=0"))
            .collect::<Vec<_>>()
            .join(",")
            .into_bytes()
    }
}

/// A server's answer to one client flight.
struct Answer {
    data: Option<Vec<u8>>,
    close: bool,
}

impl Answer {
    fn reply(data: Vec<u8>) -> Self {
        Answer { data: Some(data), close: false }
    }

    fn last(data: Vec<u8>) -> Self {
        Answer { data: Some(data), close: true }
    }

    fn hang_up() -> Self {
        Answer { data: None, close: true }
    }

    fn ignore() -> Self {
        Answer { data: None, close: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AmqpStage {
    Header,
    StartOk,
    Open,
}

/// Per-connection application state.
#[derive(Debug)]
enum AppState {
    Mqtt { level: Option<u8> },
    Amqp(AmqpStage),
    OpcUa { acknowledged: bool },
    Coap,
}

pub struct PlantSession {
    plant: Arc<Plant>,
    port: u16,
    flavor: Flavor,
    service: Service,
    latency: Duration,
    secured: Option<u16>,
    server_seq: u64,
    app: AppState,
    closed: bool,
}

impl PlantSession {
    pub fn new(plant: Arc<Plant>, port: u16, service: Service, latency: Duration) -> Self {
        let flavor = match plant.protocol.transport() {
            Transport::StreamTcp => Flavor::Stream,
            Transport::DatagramUdp => Flavor::Datagram,
        };
        let app = match plant.protocol {
            Protocol::Mqtt => AppState::Mqtt { level: None },
            Protocol::Amqp => AppState::Amqp(AmqpStage::Header),
            Protocol::OpcUa => AppState::OpcUa { acknowledged: false },
            Protocol::Coap => AppState::Coap,
        };
        PlantSession { plant, port, flavor, service, latency, secured: None, server_seq: 1, app, closed: false }
    }

    fn respond(&mut self, payload: &[u8]) -> Answer {
        match self.service {
            Service::Closed | Service::Faulty => Answer::hang_up(),
            Service::Plain(app) => self.application(app, payload),
            Service::Tls(app) => self.tls(app, payload),
        }
    }

    fn tls(&mut self, app: App, payload: &[u8]) -> Answer {
        let flavor = self.flavor;
        let Some(version) = self.secured else {
            let hello = match tls::parse_client_hello(flavor, payload) {
                Ok(h) => h,
                Err(_) => return Answer::last(tls::alert(flavor, tls::ALERT_UNEXPECTED_MESSAGE)),
            };
            return match self.plant.negotiate(flavor, &hello) {
                Ok(sh) => {
                    self.secured = Some(sh.version);
                    let cert = self.plant.certificate.as_ref().map(CertSummary::encode);
                    Answer::reply(tls::server_flight(flavor, sh, cert.as_deref()))
                }
                Err(alert) => Answer::last(tls::alert(flavor, alert)),
            };
        };
        let inner = match tls::unwrap_application(flavor, payload) {
            Ok(d) => d,
            Err(_) => return Answer::last(tls::alert(flavor, tls::ALERT_UNEXPECTED_MESSAGE)),
        };
        let answer = self.application(app, &inner);
        let data = answer.data.map(|d| {
            let wrapped = tls::wrap_application(flavor, version, self.server_seq, &d);
            self.server_seq += 1 + (d.len() >> 14) as u64;
            wrapped
        });
        Answer { data, close: answer.close }
    }

    fn application(&mut self, app: App, payload: &[u8]) -> Answer {
        if app == App::Web {
            return match self.flavor {
                Flavor::Stream => Answer::last(HTTP_400.to_vec()),
                Flavor::Datagram => Answer::reply(SSDP_NOTIFY.to_vec()),
            };
        }
        let plant = Arc::clone(&self.plant);
        match &mut self.app {
            AppState::Mqtt { level } => mqtt_server(&plant, level, payload),
            AppState::Amqp(stage) => amqp_server(&plant, stage, payload),
            AppState::OpcUa { acknowledged } => opcua_server(&plant, acknowledged, payload),
            AppState::Coap => coap_server(&plant, payload),
        }
    }

    fn frame(&self, data: Vec<u8>) -> Vec<u8> {
        match self.flavor {
            Flavor::Stream => data,
            Flavor::Datagram => udp_datagram(self.port, CLIENT_PORT, &data),
        }
    }
}

impl Session for PlantSession {
    fn exchange(&mut self, payload: &[u8], timeout: Duration) -> Exchange {
        let lat = self.latency.min(timeout);
        let at_latency = move |reply| Exchange { reply, elapsed: lat };
        if self.closed {
            return at_latency(Reply::Closed);
        }
        if self.service == Service::Faulty {
            let mut d = udp_datagram(self.port, CLIENT_PORT, b"\x00\x01");
            d[4..6].copy_from_slice(&0x0400u16.to_be_bytes());
            return at_latency(Reply::Data(d));
        }
        let answer = self.respond(payload);
        // datagram services have no connection to tear down
        if answer.close && self.flavor == Flavor::Stream {
            self.closed = true;
        }
        match answer.data {
            Some(d) => {
                let framed = self.frame(d);
                at_latency(Reply::Data(framed))
            }
            None if answer.close && self.flavor == Flavor::Stream => at_latency(Reply::Closed),
            None => Exchange { reply: Reply::Silence, elapsed: timeout },
        }
    }
}

fn mqtt_server(plant: &Plant, level: &mut Option<u8>, payload: &[u8]) -> Answer {
    let Some(lvl) = *level else {
        let Ok(c) = Connect::decode(payload) else {
            return Answer::hang_up();
        };
        if !matches!(c.level, mqtt::LEVEL_V311 | mqtt::LEVEL_V5) {
            return Answer::last(Connack { level: mqtt::LEVEL_V311, session_present: false, code: 1 }.encode());
        }
        let code = match (plant.flags.anonymous, c.level) {
            (true, _) => 0,
            (false, mqtt::LEVEL_V5) => 0x87,
            (false, _) => 5,
        };
        let connack = Connack { level: c.level, session_present: false, code }.encode();
        if code != 0 {
            return Answer::last(connack);
        }
        *level = Some(c.level);
        return Answer::reply(connack);
    };
    let Ok(packets) = mqtt::split_packets(payload) else {
        return Answer::hang_up();
    };
    let mut out = Vec::new();
    for p in &packets {
        match p.kind {
            mqtt::SUBSCRIBE => {
                let Ok((id, filters)) = mqtt::decode_subscribe(lvl, p) else {
                    return Answer::hang_up();
                };
                out.extend(mqtt::encode_suback(lvl, id, &vec![0; filters.len()]));
                for topic in plant.topics.iter().filter(|t| filters.iter().any(|f| topic_matches(f, t))) {
                    out.extend(mqtt::encode_publish(lvl, topic, b"{\"v\":21.5}", true));
                }
            }
            mqtt::DISCONNECT => return Answer { data: (!out.is_empty()).then_some(out), close: true },
            _ => {}
        }
    }
    if out.is_empty() {
        Answer::ignore()
    } else {
        Answer::reply(out)
    }
}

fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

fn amqp_server(plant: &Plant, stage: &mut AmqpStage, payload: &[u8]) -> Answer {
    match *stage {
        AmqpStage::Header => {
            if payload != amqp::PROTOCOL_HEADER {
                return Answer::last(amqp::PROTOCOL_HEADER.to_vec());
            }
            *stage = AmqpStage::StartOk;
            Answer::reply(plant.amqp_start().encode())
        }
        AmqpStage::StartOk => match Method::decode(payload) {
            Ok((Method::StartOk(ok), _)) => {
                if ok.mechanism == "ANONYMOUS" && plant.flags.anonymous {
                    *stage = AmqpStage::Open;
                    Answer::reply(Method::Tune { channel_max: 2047, frame_max: 131_072, heartbeat: 60 }.encode())
                } else {
                    let text = format!("ACCESS_REFUSED - Login was refused using authentication mechanism {}", ok.mechanism);
                    Answer::last(Method::Close { reply_code: amqp::REPLY_ACCESS_REFUSED, reply_text: text }.encode())
                }
            }
            _ => Answer::hang_up(),
        },
        AmqpStage::Open => Answer::ignore(),
    }
}

fn opcua_server(plant: &Plant, acknowledged: &mut bool, payload: &[u8]) -> Answer {
    let msg = Message::decode(payload);
    if !*acknowledged {
        return match msg {
            Ok(Message::Hello(h)) => {
                *acknowledged = true;
                Answer::reply(
                    Message::Acknowledge(Acknowledge {
                        protocol_version: 0,
                        receive_buffer: h.receive_buffer.min(65_536),
                        send_buffer: h.send_buffer.min(65_536),
                        max_message: 0,
                        max_chunks: 0,
                    })
                    .encode(),
                )
            }
            _ => Answer::last(
                Message::Error { code: OPCUA_BAD_MESSAGE_TYPE, reason: "expected HEL".into() }.encode(),
            ),
        };
    }
    match msg {
        Ok(Message::OpenRequest { .. }) => Answer::reply(
            Message::OpenResponse { channel_id: 1 + plant.index as u32, token_id: 1 }.encode(),
        ),
        Ok(Message::GetEndpointsRequest { .. }) => {
            Answer::reply(Message::GetEndpointsResponse { endpoints: plant.endpoints() }.encode())
        }
        Ok(_) => Answer::reply(Message::ServiceFault { status: OPCUA_BAD_SERVICE_UNSUPPORTED }.encode()),
        Err(_) => Answer::hang_up(),
    }
}

fn coap_server(plant: &Plant, payload: &[u8]) -> Answer {
    let Ok(req) = coap::Message::decode(payload) else {
        return Answer::ignore();
    };
    if !matches!(req.mtype, MsgType::Confirmable | MsgType::NonConfirmable) {
        return Answer::ignore();
    }
    let mtype = if req.mtype == MsgType::Confirmable { MsgType::Acknowledgement } else { MsgType::NonConfirmable };
    let (code, options, body) = if req.code == (0, 1) && req.uri_path() == "/.well-known/core" {
        ((2, 5), vec![(coap::OPTION_CONTENT_FORMAT, vec![coap::CONTENT_FORMAT_LINK as u8])], plant.link_format())
    } else {
        ((4, 4), vec![], Vec::new())
    };
    Answer::reply(
        coap::Message { mtype, code, message_id: req.message_id, token: req.token, options, payload: body }.encode(),
    )
}

/// An unplanted address: nothing ever answers.
pub struct Void;

impl Session for Void {
    fn exchange(&mut self, _payload: &[u8], timeout: Duration) -> Exchange {
        Exchange { reply: Reply::Silence, elapsed: timeout }
    }
}

/// A live host without a listener on the probed datagram port.
pub struct PortUnreachable(pub Duration);

impl Session for PortUnreachable {
    fn exchange(&mut self, _payload: &[u8], timeout: Duration) -> Exchange {
        Exchange { reply: Reply::Closed, elapsed: self.0.min(timeout) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_filters() {
        assert!(topic_matches("#", "a/b"));
        assert!(topic_matches("a/+/c", "a/b/c"));
        assert!(!topic_matches("a/+", "a/b/c"));
        assert!(topic_matches("a/b", "a/b"));
    }

    #[test]
    fn ssdp_banner_is_not_coap() {
        assert!(coap::Message::decode(SSDP_NOTIFY).is_err());
    }
}
