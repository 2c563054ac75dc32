//! TLS and DTLS record and handshake framing.
//!
//! Covers the unencrypted part of a handshake: ClientHello, the server's
//! first flight (ServerHello, Certificate, ServerHelloDone) and alerts.
//! Application data after the handshake is carried in application_data
//! records without encryption.

use super::{malformed, put_u24, ProtoError, Reader};

pub const CONTENT_ALERT: u8 = 21;
pub const CONTENT_HANDSHAKE: u8 = 22;
pub const CONTENT_APPLICATION: u8 = 23;

pub const HS_CLIENT_HELLO: u8 = 1;
pub const HS_SERVER_HELLO: u8 = 2;
pub const HS_CERTIFICATE: u8 = 11;
pub const HS_SERVER_HELLO_DONE: u8 = 14;

pub const ALERT_UNEXPECTED_MESSAGE: u8 = 10;
pub const ALERT_HANDSHAKE_FAILURE: u8 = 40;
pub const ALERT_PROTOCOL_VERSION: u8 = 70;

pub const TLS10: u16 = 0x0301;
pub const TLS12: u16 = 0x0303;
pub const TLS13: u16 = 0x0304;
pub const DTLS10: u16 = 0xfeff;
pub const DTLS12: u16 = 0xfefd;
pub const DTLS13: u16 = 0xfefc;

const EXT_SUPPORTED_GROUPS: u16 = 10;
const EXT_SIGNATURE_ALGORITHMS: u16 = 13;
const EXT_SUPPORTED_VERSIONS: u16 = 43;
const MAX_FRAGMENT: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Flavor {
    Stream,
    Datagram,
}

impl Flavor {
    pub fn legacy_version(self) -> u16 {
        match self {
            Flavor::Stream => TLS12,
            Flavor::Datagram => DTLS12,
        }
    }

    pub fn v13(self) -> u16 {
        match self {
            Flavor::Stream => TLS13,
            Flavor::Datagram => DTLS13,
        }
    }

    fn header_len(self) -> usize {
        match self {
            Flavor::Stream => 5,
            Flavor::Datagram => 13,
        }
    }
}

pub fn version_name(v: u16) -> String {
    match v {
        0x0300 => "SSLv3".into(),
        TLS10 => "TLSv1.0".into(),
        0x0302 => "TLSv1.1".into(),
        TLS12 => "TLSv1.2".into(),
        TLS13 => "TLSv1.3".into(),
        DTLS10 => "DTLSv1.0".into(),
        DTLS12 => "DTLSv1.2".into(),
        DTLS13 => "DTLSv1.3".into(),
        other => format!("0x{other:04x}"),
    }
}

pub fn is_tls13_version(v: u16) -> bool {
    v == TLS13 || v == DTLS13
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub content_type: u8,
    pub version: u16,
    pub fragment: Vec<u8>,
}

pub fn encode_record(flavor: Flavor, content_type: u8, version: u16, seq: u64, fragment: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fragment.len() + 13);
    out.push(content_type);
    out.extend_from_slice(&version.to_be_bytes());
    if flavor == Flavor::Datagram {
        let epoch: u16 = if content_type == CONTENT_APPLICATION { 1 } else { 0 };
        out.extend_from_slice(&epoch.to_be_bytes());
        out.extend_from_slice(&seq.to_be_bytes()[2..]);
    }
    out.extend_from_slice(&(fragment.len() as u16).to_be_bytes());
    out.extend_from_slice(fragment);
    out
}

/// Splits a byte string into records; anything that is not a well-formed
/// record sequence is rejected.
pub fn decode_records(flavor: Flavor, buf: &[u8]) -> Result<Vec<Record>, ProtoError> {
    let mut r = Reader::new(buf);
    let mut out = Vec::new();
    if buf.is_empty() {
        return malformed("empty");
    }
    while !r.is_empty() {
        if r.remaining() < flavor.header_len() {
            return malformed("truncated record header");
        }
        let content_type = r.u8()?;
        if !(20..=24).contains(&content_type) {
            return malformed(format!("content type {content_type}"));
        }
        let version = r.u16_be()?;
        let plausible = match flavor {
            Flavor::Stream => (0x0300..=0x0304).contains(&version),
            Flavor::Datagram => version >= 0xfefc,
        };
        if !plausible {
            return malformed(format!("record version {version:#06x}"));
        }
        if flavor == Flavor::Datagram {
            r.take(8)?;
        }
        let len = r.u16_be()? as usize;
        if len > MAX_FRAGMENT + 2048 {
            return malformed("oversized record");
        }
        out.push(Record {
            content_type,
            version,
            fragment: r.take(len)?.to_vec(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub random: [u8; 32],
    pub suites: Vec<u16>,
    /// From supported_versions when present, else the legacy version.
    pub versions: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerHello {
    pub version: u16,
    pub suite: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Handshake {
    ClientHello(ClientHello),
    ServerHello(ServerHello),
    Certificate(Vec<Vec<u8>>),
    ServerHelloDone,
    Other(u8),
}

fn put_ext(out: &mut Vec<u8>, kind: u16, data: &[u8]) {
    out.extend_from_slice(&kind.to_be_bytes());
    out.extend_from_slice(&(data.len() as u16).to_be_bytes());
    out.extend_from_slice(data);
}

fn handshake_body(flavor: Flavor, h: &Handshake) -> (u8, Vec<u8>) {
    let mut b = Vec::new();
    match h {
        Handshake::ClientHello(ch) => {
            b.extend_from_slice(&flavor.legacy_version().to_be_bytes());
            b.extend_from_slice(&ch.random);
            b.push(0); // session id
            if flavor == Flavor::Datagram {
                b.push(0); // cookie
            }
            b.extend_from_slice(&((ch.suites.len() * 2) as u16).to_be_bytes());
            for s in &ch.suites {
                b.extend_from_slice(&s.to_be_bytes());
            }
            b.extend_from_slice(&[1, 0]); // null compression
            let mut ext = Vec::new();
            put_ext(&mut ext, EXT_SUPPORTED_GROUPS, &[0, 4, 0x00, 0x1d, 0x00, 0x17]);
            put_ext(&mut ext, EXT_SIGNATURE_ALGORITHMS, &[0, 6, 0x04, 0x03, 0x08, 0x04, 0x04, 0x01]);
            let mut sv = vec![(ch.versions.len() * 2) as u8];
            for v in &ch.versions {
                sv.extend_from_slice(&v.to_be_bytes());
            }
            put_ext(&mut ext, EXT_SUPPORTED_VERSIONS, &sv);
            b.extend_from_slice(&(ext.len() as u16).to_be_bytes());
            b.extend_from_slice(&ext);
            (HS_CLIENT_HELLO, b)
        }
        Handshake::ServerHello(sh) => {
            let v13 = is_tls13_version(sh.version);
            let legacy = if v13 { flavor.legacy_version() } else { sh.version };
            b.extend_from_slice(&legacy.to_be_bytes());
            b.extend_from_slice(&[0x5a; 32]);
            b.push(0);
            b.extend_from_slice(&sh.suite.to_be_bytes());
            b.push(0);
            let mut ext = Vec::new();
            if v13 {
                put_ext(&mut ext, EXT_SUPPORTED_VERSIONS, &sh.version.to_be_bytes());
            }
            b.extend_from_slice(&(ext.len() as u16).to_be_bytes());
            b.extend_from_slice(&ext);
            (HS_SERVER_HELLO, b)
        }
        Handshake::Certificate(chain) => {
            let mut list = Vec::new();
            for c in chain {
                put_u24(&mut list, c.len() as u32);
                list.extend_from_slice(c);
            }
            put_u24(&mut b, list.len() as u32);
            b.extend_from_slice(&list);
            (HS_CERTIFICATE, b)
        }
        Handshake::ServerHelloDone => (HS_SERVER_HELLO_DONE, b),
        Handshake::Other(t) => (*t, b),
    }
}

pub fn encode_handshakes(flavor: Flavor, msgs: &[Handshake]) -> Vec<u8> {
    let mut out = Vec::new();
    for (seq, h) in msgs.iter().enumerate() {
        let (kind, body) = handshake_body(flavor, h);
        out.push(kind);
        put_u24(&mut out, body.len() as u32);
        if flavor == Flavor::Datagram {
            out.extend_from_slice(&(seq as u16).to_be_bytes());
            put_u24(&mut out, 0);
            put_u24(&mut out, body.len() as u32);
        }
        out.extend_from_slice(&body);
    }
    out
}

fn read_extensions(r: &mut Reader<'_>) -> Result<Vec<(u16, Vec<u8>)>, ProtoError> {
    if r.is_empty() {
        return Ok(Vec::new());
    }
    let total = r.u16_be()? as usize;
    let mut er = Reader::new(r.take(total)?);
    let mut out = Vec::new();
    while !er.is_empty() {
        let kind = er.u16_be()?;
        let n = er.u16_be()? as usize;
        out.push((kind, er.take(n)?.to_vec()));
    }
    Ok(out)
}

fn decode_body(flavor: Flavor, kind: u8, body: &[u8]) -> Result<Handshake, ProtoError> {
    let mut r = Reader::new(body);
    Ok(match kind {
        HS_CLIENT_HELLO => {
            let legacy = r.u16_be()?;
            let random: [u8; 32] = r.take(32)?.try_into().unwrap();
            let sid = r.u8()? as usize;
            r.take(sid)?;
            if flavor == Flavor::Datagram {
                let cookie = r.u8()? as usize;
                r.take(cookie)?;
            }
            let n = r.u16_be()? as usize;
            if !n.is_multiple_of(2) {
                return malformed("odd cipher suite vector");
            }
            let mut sr = Reader::new(r.take(n)?);
            let mut suites = Vec::new();
            while !sr.is_empty() {
                suites.push(sr.u16_be()?);
            }
            let comp = r.u8()? as usize;
            r.take(comp)?;
            let mut versions = vec![legacy];
            for (k, data) in read_extensions(&mut r)? {
                if k == EXT_SUPPORTED_VERSIONS {
                    let mut vr = Reader::new(&data);
                    let n = vr.u8()? as usize;
                    let mut vv = Reader::new(vr.take(n)?);
                    versions.clear();
                    while !vv.is_empty() {
                        versions.push(vv.u16_be()?);
                    }
                }
            }
            Handshake::ClientHello(ClientHello { random, suites, versions })
        }
        HS_SERVER_HELLO => {
            let mut version = r.u16_be()?;
            r.take(32)?;
            let sid = r.u8()? as usize;
            r.take(sid)?;
            let suite = r.u16_be()?;
            r.u8()?;
            for (k, data) in read_extensions(&mut r)? {
                if k == EXT_SUPPORTED_VERSIONS {
                    version = Reader::new(&data).u16_be()?;
                }
            }
            Handshake::ServerHello(ServerHello { version, suite })
        }
        HS_CERTIFICATE => {
            let total = r.u24_be()? as usize;
            let mut lr = Reader::new(r.take(total)?);
            let mut chain = Vec::new();
            while !lr.is_empty() {
                let n = lr.u24_be()? as usize;
                chain.push(lr.take(n)?.to_vec());
            }
            Handshake::Certificate(chain)
        }
        HS_SERVER_HELLO_DONE => Handshake::ServerHelloDone,
        other => Handshake::Other(other),
    })
}

pub fn decode_handshakes(flavor: Flavor, buf: &[u8]) -> Result<Vec<Handshake>, ProtoError> {
    let mut r = Reader::new(buf);
    let mut out = Vec::new();
    while !r.is_empty() {
        let kind = r.u8()?;
        let len = r.u24_be()? as usize;
        if flavor == Flavor::Datagram {
            r.u16_be()?;
            let offset = r.u24_be()?;
            let frag_len = r.u24_be()? as usize;
            if offset != 0 || frag_len != len {
                return malformed("fragmented DTLS handshake messages are not supported");
            }
        }
        out.push(decode_body(flavor, kind, r.take(len)?)?);
    }
    Ok(out)
}

/// What the client puts on the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offer {
    pub suites: Vec<u16>,
    pub allow_tls13: bool,
    pub allow_tls12: bool,
}

impl Offer {
    pub fn versions(&self, flavor: Flavor) -> Vec<u16> {
        let mut v = Vec::new();
        if self.allow_tls13 {
            v.push(flavor.v13());
        }
        if self.allow_tls12 {
            v.push(flavor.legacy_version());
        }
        v
    }
}

pub fn client_hello(flavor: Flavor, offer: &Offer, random: [u8; 32]) -> Vec<u8> {
    let hs = encode_handshakes(
        flavor,
        &[Handshake::ClientHello(ClientHello {
            random,
            suites: offer.suites.clone(),
            versions: offer.versions(flavor),
        })],
    );
    let record_version = match flavor {
        Flavor::Stream => TLS10,
        Flavor::Datagram => DTLS10,
    };
    encode_record(flavor, CONTENT_HANDSHAKE, record_version, 0, &hs)
}

pub fn alert(flavor: Flavor, description: u8) -> Vec<u8> {
    encode_record(flavor, CONTENT_ALERT, flavor.legacy_version(), 1, &[2, description])
}

/// ServerHello, optional Certificate and ServerHelloDone in one record.
pub fn server_flight(flavor: Flavor, hello: ServerHello, cert: Option<&[u8]>) -> Vec<u8> {
    let mut msgs = vec![Handshake::ServerHello(hello)];
    if let Some(c) = cert {
        msgs.push(Handshake::Certificate(vec![c.to_vec()]));
    }
    if !is_tls13_version(hello.version) {
        msgs.push(Handshake::ServerHelloDone);
    }
    encode_record(flavor, CONTENT_HANDSHAKE, flavor.legacy_version(), 1, &encode_handshakes(flavor, &msgs))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TlsFailure {
    Alert(u8),
    NotTls(String),
    Protocol(String),
}

impl std::fmt::Display for TlsFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TlsFailure::Alert(d) => write!(f, "alert {d}"),
            TlsFailure::NotTls(why) => write!(f, "not TLS: {why}"),
            TlsFailure::Protocol(why) => write!(f, "handshake error: {why}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerFlight {
    pub hello: ServerHello,
    pub certificates: Vec<Vec<u8>>,
}

fn fatal_alert(records: &[Record]) -> Option<u8> {
    records
        .iter()
        .find(|r| r.content_type == CONTENT_ALERT)
        .map(|r| r.fragment.get(1).copied().unwrap_or(0))
}

/// Client-side check of the server's reply to a ClientHello.
pub fn parse_server_flight(flavor: Flavor, offer: &Offer, buf: &[u8]) -> Result<ServerFlight, TlsFailure> {
    let records = decode_records(flavor, buf).map_err(|e| TlsFailure::NotTls(e.to_string()))?;
    if let Some(d) = fatal_alert(&records) {
        return Err(TlsFailure::Alert(d));
    }
    let hs: Vec<u8> = records
        .iter()
        .filter(|r| r.content_type == CONTENT_HANDSHAKE)
        .flat_map(|r| r.fragment.iter().copied())
        .collect();
    let msgs = decode_handshakes(flavor, &hs).map_err(|e| TlsFailure::Protocol(e.to_string()))?;
    let mut hello = None;
    let mut certificates = Vec::new();
    for m in msgs {
        match m {
            Handshake::ServerHello(h) => hello = Some(h),
            Handshake::Certificate(c) => certificates = c,
            _ => {}
        }
    }
    let hello = hello.ok_or_else(|| TlsFailure::Protocol("no ServerHello".into()))?;
    if !offer.suites.contains(&hello.suite) {
        return Err(TlsFailure::Protocol(format!("server chose unoffered suite {:#06x}", hello.suite)));
    }
    if !offer.versions(flavor).contains(&hello.version) {
        return Err(TlsFailure::Protocol(format!("server chose unoffered version {}", version_name(hello.version))));
    }
    Ok(ServerFlight { hello, certificates })
}

/// Server-side parse of a ClientHello record.
pub fn parse_client_hello(flavor: Flavor, buf: &[u8]) -> Result<ClientHello, ProtoError> {
    let records = decode_records(flavor, buf)?;
    let first = records.first().filter(|r| r.content_type == CONTENT_HANDSHAKE);
    let Some(rec) = first else {
        return Err(ProtoError::Unexpected("first record is not a handshake".into()));
    };
    match decode_handshakes(flavor, &rec.fragment)?.into_iter().next() {
        Some(Handshake::ClientHello(ch)) => Ok(ch),
        _ => Err(ProtoError::Unexpected("first handshake message is not ClientHello".into())),
    }
}

pub fn wrap_application(flavor: Flavor, version: u16, first_seq: u64, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let chunks: Vec<&[u8]> = if data.is_empty() { vec![data] } else { data.chunks(MAX_FRAGMENT).collect() };
    for (i, chunk) in chunks.into_iter().enumerate() {
        out.extend(encode_record(flavor, CONTENT_APPLICATION, version, first_seq + i as u64, chunk));
    }
    out
}

/// Concatenated application payload of a record sequence; a fatal alert
/// anywhere in it is reported instead.
pub fn unwrap_application(flavor: Flavor, buf: &[u8]) -> Result<Vec<u8>, TlsFailure> {
    let records = decode_records(flavor, buf).map_err(|e| TlsFailure::NotTls(e.to_string()))?;
    if let Some(d) = fatal_alert(&records) {
        return Err(TlsFailure::Alert(d));
    }
    Ok(records
        .into_iter()
        .filter(|r| r.content_type == CONTENT_APPLICATION)
        .flat_map(|r| r.fragment)
        .collect())
}

/// Cheap sniff used by plaintext responders: does this look like the start
/// of a TLS/DTLS handshake record?
pub fn looks_like_handshake(buf: &[u8]) -> bool {
    buf.len() >= 3 && buf[0] == CONTENT_HANDSHAKE && (buf[1] == 0x03 || buf[1] == 0xfe)
}
