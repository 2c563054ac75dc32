//! AMQP 0-9-1 connection negotiation: protocol header, Connection.Start,
//! Start-Ok, Tune and Close.

use std::collections::BTreeMap;

use super::{malformed, ProtoError, Reader};

pub const PROTOCOL_HEADER: [u8; 8] = *b"AMQP\x00\x00\x09\x01";
const FRAME_METHOD: u8 = 1;
const FRAME_END: u8 = 0xce;
const CLASS_CONNECTION: u16 = 10;
const START: u16 = 10;
const START_OK: u16 = 11;
const TUNE: u16 = 30;
const CLOSE: u16 = 50;

pub const REPLY_ACCESS_REFUSED: u16 = 403;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Bool(bool),
    Int(i64),
    Str(String),
    Table(FieldTable),
    Void(()),
}

pub type FieldTable = BTreeMap<String, FieldValue>;

fn put_shortstr(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(255)];
    out.push(b.len() as u8);
    out.extend_from_slice(b);
}

fn put_longstr(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

fn put_table(out: &mut Vec<u8>, t: &FieldTable) {
    let mut body = Vec::new();
    for (k, v) in t {
        put_shortstr(&mut body, k);
        match v {
            FieldValue::Bool(b) => {
                body.push(b't');
                body.push(*b as u8);
            }
            FieldValue::Int(i) => {
                body.push(b'l');
                body.extend_from_slice(&i.to_be_bytes());
            }
            FieldValue::Str(s) => {
                body.push(b'S');
                put_longstr(&mut body, s.as_bytes());
            }
            FieldValue::Table(t) => {
                body.push(b'F');
                put_table(&mut body, t);
            }
            FieldValue::Void(()) => body.push(b'V'),
        }
    }
    put_longstr(out, &body);
}

fn read_shortstr(r: &mut Reader<'_>) -> Result<String, ProtoError> {
    let n = r.u8()? as usize;
    Ok(String::from_utf8_lossy(r.take(n)?).into_owned())
}

fn read_longstr<'a>(r: &mut Reader<'a>) -> Result<&'a [u8], ProtoError> {
    let n = r.u32_be()? as usize;
    r.take(n)
}

fn read_table(r: &mut Reader<'_>) -> Result<FieldTable, ProtoError> {
    let mut tr = Reader::new(read_longstr(r)?);
    let mut t = FieldTable::new();
    while !tr.is_empty() {
        let name = read_shortstr(&mut tr)?;
        let value = match tr.u8()? {
            b't' => FieldValue::Bool(tr.u8()? != 0),
            b'b' => FieldValue::Int(tr.u8()? as i8 as i64),
            b'B' => FieldValue::Int(tr.u8()? as i64),
            b's' => FieldValue::Int(tr.u16_be()? as i16 as i64),
            b'u' => FieldValue::Int(tr.u16_be()? as i64),
            b'I' => FieldValue::Int(tr.u32_be()? as i32 as i64),
            b'i' => FieldValue::Int(tr.u32_be()? as i64),
            b'l' | b'T' => FieldValue::Int(tr.u64_be()? as i64),
            b'S' => FieldValue::Str(String::from_utf8_lossy(read_longstr(&mut tr)?).into_owned()),
            b'F' => FieldValue::Table(read_table(&mut tr)?),
            b'V' => FieldValue::Void(()),
            other => return malformed(format!("unsupported field type {:?}", other as char)),
        };
        t.insert(name, value);
    }
    Ok(t)
}

fn method_frame(channel: u16, method: u16, args: &[u8]) -> Vec<u8> {
    let mut payload = CLASS_CONNECTION.to_be_bytes().to_vec();
    payload.extend_from_slice(&method.to_be_bytes());
    payload.extend_from_slice(args);
    let mut out = vec![FRAME_METHOD];
    out.extend_from_slice(&channel.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out.push(FRAME_END);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Start(Start),
    StartOk(StartOk),
    Tune { channel_max: u16, frame_max: u32, heartbeat: u16 },
    Close { reply_code: u16, reply_text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Start {
    pub version: (u8, u8),
    pub server_properties: FieldTable,
    pub mechanisms: Vec<String>,
    pub locales: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOk {
    pub client_properties: FieldTable,
    pub mechanism: String,
    pub response: Vec<u8>,
    pub locale: String,
}

impl Method {
    pub fn encode(&self) -> Vec<u8> {
        let mut args = Vec::new();
        let id = match self {
            Method::Start(s) => {
                args.push(s.version.0);
                args.push(s.version.1);
                put_table(&mut args, &s.server_properties);
                put_longstr(&mut args, s.mechanisms.join(" ").as_bytes());
                put_longstr(&mut args, s.locales.join(" ").as_bytes());
                START
            }
            Method::StartOk(s) => {
                put_table(&mut args, &s.client_properties);
                put_shortstr(&mut args, &s.mechanism);
                put_longstr(&mut args, &s.response);
                put_shortstr(&mut args, &s.locale);
                START_OK
            }
            Method::Tune { channel_max, frame_max, heartbeat } => {
                args.extend_from_slice(&channel_max.to_be_bytes());
                args.extend_from_slice(&frame_max.to_be_bytes());
                args.extend_from_slice(&heartbeat.to_be_bytes());
                TUNE
            }
            Method::Close { reply_code, reply_text } => {
                args.extend_from_slice(&reply_code.to_be_bytes());
                put_shortstr(&mut args, reply_text);
                args.extend_from_slice(&0u16.to_be_bytes());
                args.extend_from_slice(&0u16.to_be_bytes());
                CLOSE
            }
        };
        method_frame(0, id, &args)
    }

    /// Decodes one method frame from the front of `buf`, returning the
    /// method and the number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Method, usize), ProtoError> {
        if buf.starts_with(b"AMQP") {
            return Err(ProtoError::Unexpected("protocol header (version mismatch)".into()));
        }
        let mut r = Reader::new(buf);
        if r.u8()? != FRAME_METHOD {
            return malformed("not a method frame");
        }
        let _channel = r.u16_be()?;
        let size = r.u32_be()? as usize;
        let payload = r.take(size)?;
        if r.u8()? != FRAME_END {
            return malformed("missing frame-end octet");
        }
        let consumed = r.position();
        let mut p = Reader::new(payload);
        if p.u16_be()? != CLASS_CONNECTION {
            return Err(ProtoError::Unexpected("non-connection class".into()));
        }
        let method = match p.u16_be()? {
            START => {
                let version = (p.u8()?, p.u8()?);
                let server_properties = read_table(&mut p)?;
                let words = |b: &[u8]| -> Vec<String> {
                    String::from_utf8_lossy(b).split_whitespace().map(str::to_string).collect()
                };
                let mechanisms = words(read_longstr(&mut p)?);
                let locales = words(read_longstr(&mut p)?);
                Method::Start(Start { version, server_properties, mechanisms, locales })
            }
            START_OK => Method::StartOk(StartOk {
                client_properties: read_table(&mut p)?,
                mechanism: read_shortstr(&mut p)?,
                response: read_longstr(&mut p)?.to_vec(),
                locale: read_shortstr(&mut p)?,
            }),
            TUNE => Method::Tune {
                channel_max: p.u16_be()?,
                frame_max: p.u32_be()?,
                heartbeat: p.u16_be()?,
            },
            CLOSE => {
                let reply_code = p.u16_be()?;
                let reply_text = read_shortstr(&mut p)?;
                p.u16_be()?;
                p.u16_be()?;
                Method::Close { reply_code, reply_text }
            }
            other => return Err(ProtoError::Unexpected(format!("connection method {other}"))),
        };
        Ok((method, consumed))
    }
}

/// Start-Ok announcing the ANONYMOUS mechanism with contact details in the
/// client properties.
pub fn anonymous_start_ok(contact: Option<&str>) -> Method {
    let mut props = FieldTable::new();
    props.insert("product".into(), FieldValue::Str("v6iot".into()));
    if let Some(c) = contact {
        props.insert("information".into(), FieldValue::Str(c.to_string()));
    }
    Method::StartOk(StartOk {
        client_properties: props,
        mechanism: "ANONYMOUS".into(),
        response: Vec::new(),
        locale: "en_US".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> Start {
        let mut props = FieldTable::new();
        props.insert("product".into(), FieldValue::Str("RabbitMQ".into()));
        props.insert("version".into(), FieldValue::Str("3.12.0".into()));
        let mut caps = FieldTable::new();
        caps.insert("publisher_confirms".into(), FieldValue::Bool(true));
        props.insert("capabilities".into(), FieldValue::Table(caps));
        Start {
            version: (0, 9),
            server_properties: props,
            mechanisms: vec!["PLAIN".into(), "AMQPLAIN".into()],
            locales: vec!["en_US".into()],
        }
    }

    #[test]
    fn start_roundtrip() {
        let m = Method::Start(start());
        let bytes = m.encode();
        assert_eq!(*bytes.last().unwrap(), FRAME_END);
        let (decoded, used) = Method::decode(&bytes).unwrap();
        assert_eq!(decoded, m);
        assert_eq!(used, bytes.len());
    }

    #[test]
    fn other_methods_roundtrip() {
        for m in [
            anonymous_start_ok(Some("mailto:scan@example.org")),
            Method::Tune { channel_max: 2047, frame_max: 131_072, heartbeat: 60 },
            Method::Close { reply_code: REPLY_ACCESS_REFUSED, reply_text: "ACCESS_REFUSED".into() },
        ] {
            assert_eq!(Method::decode(&m.encode()).unwrap().0, m);
        }
    }

    #[test]
    fn rejects_bad_frames() {
        let mut bytes = Method::Start(start()).encode();
        *bytes.last_mut().unwrap() = 0;
        assert!(Method::decode(&bytes).is_err());
        assert!(Method::decode(b"HTTP/1.1 400 Bad Request").is_err());
        assert!(Method::decode(&PROTOCOL_HEADER).is_err());
        assert!(matches!(Method::decode(&[1, 0, 0, 0, 0, 0, 9]), Err(ProtoError::Truncated { .. })));
    }
}
