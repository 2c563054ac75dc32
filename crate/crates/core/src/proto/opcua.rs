//! OPC UA binary transport: Hello/Acknowledge, an unsecured
//! OpenSecureChannel and the GetEndpoints service.

use serde::{Deserialize, Serialize};

use super::{malformed, ProtoError, Reader};

pub const SECURITY_POLICY_NONE: &str = "http://opcfoundation.org/UA/SecurityPolicy#None";

const OPEN_REQUEST: u32 = 446;
const OPEN_RESPONSE: u32 = 449;
const GET_ENDPOINTS_REQUEST: u32 = 428;
const GET_ENDPOINTS_RESPONSE: u32 = 431;
const SERVICE_FAULT: u32 = 397;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecurityMode {
    None,
    Sign,
    SignAndEncrypt,
    Invalid,
}

impl SecurityMode {
    fn from_u32(v: u32) -> Self {
        match v {
            1 => SecurityMode::None,
            2 => SecurityMode::Sign,
            3 => SecurityMode::SignAndEncrypt,
            _ => SecurityMode::Invalid,
        }
    }

    fn to_u32(self) -> u32 {
        match self {
            SecurityMode::Invalid => 0,
            SecurityMode::None => 1,
            SecurityMode::Sign => 2,
            SecurityMode::SignAndEncrypt => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserTokenType {
    Anonymous,
    UserName,
    Certificate,
    IssuedToken,
}

impl UserTokenType {
    fn from_u32(v: u32) -> Result<Self, ProtoError> {
        Ok(match v {
            0 => UserTokenType::Anonymous,
            1 => UserTokenType::UserName,
            2 => UserTokenType::Certificate,
            3 => UserTokenType::IssuedToken,
            _ => return malformed(format!("user token type {v}")),
        })
    }
}

/// The parts of an EndpointDescription kept as probe metadata.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
    pub application_uri: String,
    pub application_name: String,
    pub security_mode: SecurityMode,
    pub security_policy: String,
    pub token_types: Vec<UserTokenType>,
    pub security_level: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub protocol_version: u32,
    pub receive_buffer: u32,
    pub send_buffer: u32,
    pub max_message: u32,
    pub max_chunks: u32,
    pub endpoint_url: String,
}

impl Hello {
    pub fn new(endpoint_url: &str) -> Self {
        Hello {
            protocol_version: 0,
            receive_buffer: 65_536,
            send_buffer: 65_536,
            max_message: 0,
            max_chunks: 0,
            endpoint_url: endpoint_url.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Acknowledge {
    pub protocol_version: u32,
    pub receive_buffer: u32,
    pub send_buffer: u32,
    pub max_message: u32,
    pub max_chunks: u32,
}

/// A decoded transport-level message.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    Acknowledge(Acknowledge),
    Error { code: u32, reason: String },
    OpenRequest { request_id: u32 },
    OpenResponse { channel_id: u32, token_id: u32 },
    GetEndpointsRequest { channel_id: u32, token_id: u32, request_id: u32, endpoint_url: String },
    GetEndpointsResponse { endpoints: Vec<Endpoint> },
    ServiceFault { status: u32 },
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_string(out: &mut Vec<u8>, s: Option<&str>) {
    match s {
        Some(s) => {
            out.extend_from_slice(&(s.len() as i32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        None => out.extend_from_slice(&(-1i32).to_le_bytes()),
    }
}

fn read_string(r: &mut Reader<'_>) -> Result<Option<String>, ProtoError> {
    let n = r.i32_le()?;
    if n < 0 {
        return Ok(None);
    }
    let b = r.take(n as usize)?;
    Ok(Some(String::from_utf8_lossy(b).into_owned()))
}

fn read_array<T>(
    r: &mut Reader<'_>,
    mut item: impl FnMut(&mut Reader<'_>) -> Result<T, ProtoError>,
) -> Result<Vec<T>, ProtoError> {
    let n = r.i32_le()?;
    if n > 10_000 {
        return malformed("array too long");
    }
    (0..n.max(0)).map(|_| item(r)).collect()
}

fn put_numeric_node(out: &mut Vec<u8>, id: u32) {
    // four-byte encoding, namespace 0
    out.push(0x01);
    out.push(0);
    out.extend_from_slice(&(id as u16).to_le_bytes());
}

fn read_node_id(r: &mut Reader<'_>) -> Result<u32, ProtoError> {
    match r.u8()? {
        0x00 => Ok(r.u8()? as u32),
        0x01 => {
            r.u8()?;
            Ok(r.u16_le()? as u32)
        }
        0x02 => {
            r.u16_le()?;
            r.u32_le()
        }
        other => malformed(format!("unsupported NodeId encoding {other:#x}")),
    }
}

fn put_request_header(out: &mut Vec<u8>, handle: u32, audit: Option<&str>) {
    out.extend_from_slice(&[0x00, 0x00]); // null authentication token
    out.extend_from_slice(&0i64.to_le_bytes());
    put_u32(out, handle);
    put_u32(out, 0);
    put_string(out, audit);
    put_u32(out, 10_000);
    out.extend_from_slice(&[0x00, 0x00, 0x00]); // empty extension object
}

fn skip_request_header(r: &mut Reader<'_>) -> Result<(), ProtoError> {
    read_node_id(r)?;
    r.i64_le()?;
    r.u32_le()?;
    r.u32_le()?;
    read_string(r)?;
    r.u32_le()?;
    skip_extension_object(r)
}

fn put_response_header(out: &mut Vec<u8>, status: u32) {
    out.extend_from_slice(&0i64.to_le_bytes());
    put_u32(out, 1);
    put_u32(out, status);
    out.push(0x00); // no diagnostics
    out.extend_from_slice(&(-1i32).to_le_bytes());
    out.extend_from_slice(&[0x00, 0x00, 0x00]);
}

fn read_response_header(r: &mut Reader<'_>) -> Result<u32, ProtoError> {
    r.i64_le()?;
    r.u32_le()?;
    let status = r.u32_le()?;
    if r.u8()? != 0 {
        return malformed("diagnostic info is not supported");
    }
    read_array(r, read_string)?;
    skip_extension_object(r)?;
    Ok(status)
}

fn skip_extension_object(r: &mut Reader<'_>) -> Result<(), ProtoError> {
    read_node_id(r)?;
    match r.u8()? {
        0 => Ok(()),
        1 | 2 => {
            let n = r.i32_le()?;
            r.take(n.max(0) as usize)?;
            Ok(())
        }
        other => malformed(format!("extension object encoding {other}")),
    }
}

fn frame(kind: &[u8; 3], body: &[u8]) -> Vec<u8> {
    let mut out = kind.to_vec();
    out.push(b'F');
    put_u32(&mut out, (body.len() + 8) as u32);
    out.extend_from_slice(body);
    out
}

fn asymmetric_header(out: &mut Vec<u8>, channel_id: u32, request_id: u32) {
    put_u32(out, channel_id);
    put_string(out, Some(SECURITY_POLICY_NONE));
    put_string(out, None);
    put_string(out, None);
    put_u32(out, 1); // sequence number
    put_u32(out, request_id);
}

fn symmetric_header(out: &mut Vec<u8>, channel_id: u32, token_id: u32, request_id: u32) {
    put_u32(out, channel_id);
    put_u32(out, token_id);
    put_u32(out, 2);
    put_u32(out, request_id);
}

fn put_endpoint(out: &mut Vec<u8>, e: &Endpoint) {
    put_string(out, Some(&e.url));
    put_string(out, Some(&e.application_uri));
    put_string(out, None); // product uri
    out.push(0x02);
    put_string(out, Some(&e.application_name));
    put_u32(out, 0); // server
    put_string(out, None);
    put_string(out, None);
    out.extend_from_slice(&1i32.to_le_bytes());
    put_string(out, Some(&e.url));
    put_string(out, None); // server certificate
    put_u32(out, e.security_mode.to_u32());
    put_string(out, Some(&e.security_policy));
    out.extend_from_slice(&(e.token_types.len() as i32).to_le_bytes());
    for (i, t) in e.token_types.iter().enumerate() {
        put_string(out, Some(&format!("token-{i}")));
        put_u32(out, *t as u32);
        put_string(out, None);
        put_string(out, None);
        put_string(out, None);
    }
    put_string(out, Some("http://opcfoundation.org/UA-Profile/Transport/uatcp-uasc-uabinary"));
    out.push(e.security_level);
}

fn read_localized_text(r: &mut Reader<'_>) -> Result<String, ProtoError> {
    let mask = r.u8()?;
    if mask & 0x01 != 0 {
        read_string(r)?;
    }
    Ok(if mask & 0x02 != 0 { read_string(r)?.unwrap_or_default() } else { String::new() })
}

fn read_endpoint(r: &mut Reader<'_>) -> Result<Endpoint, ProtoError> {
    let url = read_string(r)?.unwrap_or_default();
    let application_uri = read_string(r)?.unwrap_or_default();
    read_string(r)?;
    let application_name = read_localized_text(r)?;
    r.u32_le()?;
    read_string(r)?;
    read_string(r)?;
    read_array(r, read_string)?;
    read_string(r)?;
    let security_mode = SecurityMode::from_u32(r.u32_le()?);
    let security_policy = read_string(r)?.unwrap_or_default();
    let token_types = read_array(r, |r| {
        read_string(r)?;
        let t = UserTokenType::from_u32(r.u32_le()?)?;
        read_string(r)?;
        read_string(r)?;
        read_string(r)?;
        Ok(t)
    })?;
    read_string(r)?;
    let security_level = r.u8()?;
    Ok(Endpoint {
        url,
        application_uri,
        application_name,
        security_mode,
        security_policy,
        token_types,
        security_level,
    })
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Message::Hello(h) => {
                for v in [h.protocol_version, h.receive_buffer, h.send_buffer, h.max_message, h.max_chunks] {
                    put_u32(&mut b, v);
                }
                put_string(&mut b, Some(&h.endpoint_url));
                frame(b"HEL", &b)
            }
            Message::Acknowledge(a) => {
                for v in [a.protocol_version, a.receive_buffer, a.send_buffer, a.max_message, a.max_chunks] {
                    put_u32(&mut b, v);
                }
                frame(b"ACK", &b)
            }
            Message::Error { code, reason } => {
                put_u32(&mut b, *code);
                put_string(&mut b, Some(reason));
                frame(b"ERR", &b)
            }
            Message::OpenRequest { request_id } => {
                asymmetric_header(&mut b, 0, *request_id);
                put_numeric_node(&mut b, OPEN_REQUEST);
                put_request_header(&mut b, 1, None);
                put_u32(&mut b, 0);
                put_u32(&mut b, 0); // issue
                put_u32(&mut b, 1); // security mode None
                put_string(&mut b, None);
                put_u32(&mut b, 600_000);
                frame(b"OPN", &b)
            }
            Message::OpenResponse { channel_id, token_id } => {
                asymmetric_header(&mut b, *channel_id, 1);
                put_numeric_node(&mut b, OPEN_RESPONSE);
                put_response_header(&mut b, 0);
                put_u32(&mut b, 0);
                put_u32(&mut b, *channel_id);
                put_u32(&mut b, *token_id);
                b.extend_from_slice(&0i64.to_le_bytes());
                put_u32(&mut b, 600_000);
                put_string(&mut b, None);
                frame(b"OPN", &b)
            }
            Message::GetEndpointsRequest { channel_id, token_id, request_id, endpoint_url } => {
                symmetric_header(&mut b, *channel_id, *token_id, *request_id);
                put_numeric_node(&mut b, GET_ENDPOINTS_REQUEST);
                put_request_header(&mut b, 2, None);
                put_string(&mut b, Some(endpoint_url));
                b.extend_from_slice(&0i32.to_le_bytes());
                b.extend_from_slice(&0i32.to_le_bytes());
                frame(b"MSG", &b)
            }
            Message::GetEndpointsResponse { endpoints } => {
                symmetric_header(&mut b, 1, 1, 2);
                put_numeric_node(&mut b, GET_ENDPOINTS_RESPONSE);
                put_response_header(&mut b, 0);
                b.extend_from_slice(&(endpoints.len() as i32).to_le_bytes());
                for e in endpoints {
                    put_endpoint(&mut b, e);
                }
                frame(b"MSG", &b)
            }
            Message::ServiceFault { status } => {
                symmetric_header(&mut b, 1, 1, 2);
                put_numeric_node(&mut b, SERVICE_FAULT);
                put_response_header(&mut b, *status);
                frame(b"MSG", &b)
            }
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Message, ProtoError> {
        let mut r = Reader::new(buf);
        let kind: [u8; 3] = r.take(3)?.try_into().unwrap();
        if r.u8()? != b'F' {
            return malformed("only final chunks are supported");
        }
        let size = r.u32_le()? as usize;
        if size < 8 || size > buf.len() {
            return malformed(format!("message size {size} inconsistent with {} bytes", buf.len()));
        }
        let mut r = Reader::new(&buf[8..size]);
        let msg = match &kind {
            b"HEL" => Message::Hello(Hello {
                protocol_version: r.u32_le()?,
                receive_buffer: r.u32_le()?,
                send_buffer: r.u32_le()?,
                max_message: r.u32_le()?,
                max_chunks: r.u32_le()?,
                endpoint_url: read_string(&mut r)?.unwrap_or_default(),
            }),
            b"ACK" => Message::Acknowledge(Acknowledge {
                protocol_version: r.u32_le()?,
                receive_buffer: r.u32_le()?,
                send_buffer: r.u32_le()?,
                max_message: r.u32_le()?,
                max_chunks: r.u32_le()?,
            }),
            b"ERR" => Message::Error {
                code: r.u32_le()?,
                reason: read_string(&mut r)?.unwrap_or_default(),
            },
            b"OPN" => {
                let channel = r.u32_le()?;
                if read_string(&mut r)?.as_deref() != Some(SECURITY_POLICY_NONE) {
                    return Err(ProtoError::Unexpected("secured OpenSecureChannel".into()));
                }
                read_string(&mut r)?;
                read_string(&mut r)?;
                r.u32_le()?;
                let request_id = r.u32_le()?;
                match read_node_id(&mut r)? {
                    OPEN_REQUEST => {
                        skip_request_header(&mut r)?;
                        Message::OpenRequest { request_id }
                    }
                    OPEN_RESPONSE => {
                        let status = read_response_header(&mut r)?;
                        if status != 0 {
                            return Ok(Message::ServiceFault { status });
                        }
                        r.u32_le()?;
                        let channel_id = r.u32_le()?;
                        let token_id = r.u32_le()?;
                        if channel_id != channel {
                            return malformed("channel id mismatch");
                        }
                        Message::OpenResponse { channel_id, token_id }
                    }
                    other => return Err(ProtoError::Unexpected(format!("OPN body {other}"))),
                }
            }
            b"MSG" => {
                let channel_id = r.u32_le()?;
                let token_id = r.u32_le()?;
                r.u32_le()?;
                let request_id = r.u32_le()?;
                match read_node_id(&mut r)? {
                    GET_ENDPOINTS_REQUEST => {
                        skip_request_header(&mut r)?;
                        let endpoint_url = read_string(&mut r)?.unwrap_or_default();
                        Message::GetEndpointsRequest { channel_id, token_id, request_id, endpoint_url }
                    }
                    GET_ENDPOINTS_RESPONSE => {
                        let status = read_response_header(&mut r)?;
                        if status != 0 {
                            return Ok(Message::ServiceFault { status });
                        }
                        Message::GetEndpointsResponse {
                            endpoints: read_array(&mut r, read_endpoint)?,
                        }
                    }
                    SERVICE_FAULT => Message::ServiceFault {
                        status: read_response_header(&mut r)?,
                    },
                    other => return Err(ProtoError::Unexpected(format!("service {other}"))),
                }
            }
            other => return malformed(format!("message type {:?}", String::from_utf8_lossy(other))),
        };
        Ok(msg)
    }
}
