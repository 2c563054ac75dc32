//! MQTT 3.1.1 / 5.0 control packets: CONNECT, CONNACK, SUBSCRIBE, SUBACK,
//! PUBLISH and DISCONNECT.

use super::{malformed, ProtoError, Reader};

pub const CONNECT: u8 = 1;
pub const CONNACK: u8 = 2;
pub const PUBLISH: u8 = 3;
pub const SUBSCRIBE: u8 = 8;
pub const SUBACK: u8 = 9;
pub const DISCONNECT: u8 = 14;

pub const LEVEL_V311: u8 = 4;
pub const LEVEL_V5: u8 = 5;

const PROP_USER_PROPERTY: u8 = 0x26;

pub fn encode_varint(mut v: u32, out: &mut Vec<u8>) {
    loop {
        let mut byte = (v % 128) as u8;
        v /= 128;
        if v > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if v == 0 {
            break;
        }
    }
}

fn read_varint(r: &mut Reader<'_>) -> Result<u32, ProtoError> {
    let mut value = 0u32;
    for i in 0..4 {
        let b = r.u8()?;
        value |= ((b & 0x7f) as u32) << (7 * i);
        if b & 0x80 == 0 {
            return Ok(value);
        }
    }
    malformed("variable byte integer longer than 4 bytes")
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bin(out, s.as_bytes());
}

fn put_bin(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u16).to_be_bytes());
    out.extend_from_slice(b);
}

fn read_bin<'a>(r: &mut Reader<'a>) -> Result<&'a [u8], ProtoError> {
    let n = r.u16_be()? as usize;
    r.take(n)
}

fn read_str(r: &mut Reader<'_>) -> Result<String, ProtoError> {
    String::from_utf8(read_bin(r)?.to_vec()).or_else(|_| malformed("invalid UTF-8 string"))
}

fn packet(kind: u8, flags: u8, body: &[u8]) -> Vec<u8> {
    let mut out = vec![(kind << 4) | (flags & 0x0f)];
    encode_varint(body.len() as u32, &mut out);
    out.extend_from_slice(body);
    out
}

/// One control packet split off a byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket<'a> {
    pub kind: u8,
    pub flags: u8,
    pub body: &'a [u8],
}

/// Splits a buffer into complete control packets. A trailing partial packet
/// is an error.
pub fn split_packets(buf: &[u8]) -> Result<Vec<RawPacket<'_>>, ProtoError> {
    let mut r = Reader::new(buf);
    let mut out = Vec::new();
    while !r.is_empty() {
        let first = r.u8()?;
        let len = read_varint(&mut r)? as usize;
        let body = r.take(len)?;
        out.push(RawPacket {
            kind: first >> 4,
            flags: first & 0x0f,
            body,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Connect {
    pub level: u8,
    pub client_id: String,
    pub keep_alive: u16,
    pub user_properties: Vec<(String, String)>,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
}

impl Connect {
    /// A credential-free MQTT 5 CONNECT carrying contact details as a user
    /// property.
    pub fn anonymous(client_id: &str, contact: Option<&str>) -> Self {
        Connect {
            level: LEVEL_V5,
            client_id: client_id.to_string(),
            keep_alive: 60,
            user_properties: contact
                .map(|c| vec![("contact".to_string(), c.to_string())])
                .unwrap_or_default(),
            username: None,
            password: None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        put_str(&mut body, "MQTT");
        body.push(self.level);
        let mut flags = 0x02; // clean start
        if self.username.is_some() {
            flags |= 0x80;
        }
        if self.password.is_some() {
            flags |= 0x40;
        }
        body.push(flags);
        body.extend_from_slice(&self.keep_alive.to_be_bytes());
        if self.level >= LEVEL_V5 {
            let mut props = Vec::new();
            for (k, v) in &self.user_properties {
                props.push(PROP_USER_PROPERTY);
                put_str(&mut props, k);
                put_str(&mut props, v);
            }
            encode_varint(props.len() as u32, &mut body);
            body.extend_from_slice(&props);
        }
        put_str(&mut body, &self.client_id);
        if let Some(u) = &self.username {
            put_str(&mut body, u);
        }
        if let Some(p) = &self.password {
            put_bin(&mut body, p);
        }
        packet(CONNECT, 0, &body)
    }

    pub fn decode(buf: &[u8]) -> Result<Connect, ProtoError> {
        let packets = split_packets(buf)?;
        let p = match packets.as_slice() {
            [p, ..] if p.kind == CONNECT => p,
            [p, ..] => return Err(ProtoError::Unexpected(format!("packet type {}", p.kind))),
            [] => return malformed("empty"),
        };
        let mut r = Reader::new(p.body);
        if read_str(&mut r)? != "MQTT" {
            return malformed("protocol name");
        }
        let level = r.u8()?;
        if level != LEVEL_V311 && level != LEVEL_V5 {
            return Err(ProtoError::Unexpected(format!("protocol level {level}")));
        }
        let flags = r.u8()?;
        let keep_alive = r.u16_be()?;
        let mut user_properties = Vec::new();
        if level >= LEVEL_V5 {
            let len = read_varint(&mut r)? as usize;
            let mut pr = Reader::new(r.take(len)?);
            while !pr.is_empty() {
                match pr.u8()? {
                    PROP_USER_PROPERTY => {
                        let k = read_str(&mut pr)?;
                        let v = read_str(&mut pr)?;
                        user_properties.push((k, v));
                    }
                    other => return malformed(format!("unsupported CONNECT property {other:#x}")),
                }
            }
        }
        let client_id = read_str(&mut r)?;
        if flags & 0x04 != 0 {
            return malformed("will messages are not supported");
        }
        let username = if flags & 0x80 != 0 { Some(read_str(&mut r)?) } else { None };
        let password = if flags & 0x40 != 0 { Some(read_bin(&mut r)?.to_vec()) } else { None };
        Ok(Connect {
            level,
            client_id,
            keep_alive,
            user_properties,
            username,
            password,
        })
    }
}

/// How a CONNACK answers the access-control question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConnackAccess {
    Accepted,
    AuthRequired,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connack {
    pub level: u8,
    pub session_present: bool,
    pub code: u8,
}

impl Connack {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![self.session_present as u8, self.code];
        if self.level >= LEVEL_V5 {
            body.push(0); // no properties
        }
        packet(CONNACK, 0, &body)
    }

    /// Decodes the first packet of `buf` as a CONNACK. A remaining length of
    /// two means a 3.1.1 broker, anything longer carries 5.0 properties.
    pub fn decode(buf: &[u8]) -> Result<Connack, ProtoError> {
        let packets = split_packets(buf)?;
        let p = match packets.first() {
            Some(p) if p.kind == CONNACK && p.flags == 0 => p,
            Some(p) => return Err(ProtoError::Unexpected(format!("packet type {}", p.kind))),
            None => return malformed("empty"),
        };
        let mut r = Reader::new(p.body);
        let ack_flags = r.u8()?;
        if ack_flags & 0xfe != 0 {
            return malformed("reserved CONNACK flags set");
        }
        let code = r.u8()?;
        let level = if r.is_empty() {
            LEVEL_V311
        } else {
            let len = read_varint(&mut r)? as usize;
            r.take(len)?;
            LEVEL_V5
        };
        if !r.is_empty() {
            return malformed("trailing CONNACK bytes");
        }
        if level == LEVEL_V311 && code > 5 {
            return malformed(format!("invalid 3.1.1 return code {code}"));
        }
        Ok(Connack {
            level,
            session_present: ack_flags & 1 == 1,
            code,
        })
    }

    pub fn access(&self) -> ConnackAccess {
        match (self.level, self.code) {
            (_, 0) => ConnackAccess::Accepted,
            (LEVEL_V311, 4 | 5) => ConnackAccess::AuthRequired,
            (LEVEL_V5, 0x86 | 0x87 | 0x8c) => ConnackAccess::AuthRequired,
            _ => ConnackAccess::Refused,
        }
    }
}

pub fn encode_subscribe(level: u8, packet_id: u16, filter: &str) -> Vec<u8> {
    let mut body = packet_id.to_be_bytes().to_vec();
    if level >= LEVEL_V5 {
        body.push(0);
    }
    put_str(&mut body, filter);
    body.push(0); // QoS 0
    packet(SUBSCRIBE, 0x2, &body)
}

/// Returns (packet id, topic filters) of a SUBSCRIBE.
pub fn decode_subscribe(level: u8, raw: &RawPacket<'_>) -> Result<(u16, Vec<String>), ProtoError> {
    if raw.kind != SUBSCRIBE {
        return Err(ProtoError::Unexpected(format!("packet type {}", raw.kind)));
    }
    let mut r = Reader::new(raw.body);
    let id = r.u16_be()?;
    if level >= LEVEL_V5 {
        let len = read_varint(&mut r)? as usize;
        r.take(len)?;
    }
    let mut filters = Vec::new();
    while !r.is_empty() {
        filters.push(read_str(&mut r)?);
        r.u8()?;
    }
    Ok((id, filters))
}

pub fn encode_suback(level: u8, packet_id: u16, codes: &[u8]) -> Vec<u8> {
    let mut body = packet_id.to_be_bytes().to_vec();
    if level >= LEVEL_V5 {
        body.push(0);
    }
    body.extend_from_slice(codes);
    packet(SUBACK, 0, &body)
}

pub fn encode_publish(level: u8, topic: &str, payload: &[u8], retain: bool) -> Vec<u8> {
    let mut body = Vec::new();
    put_str(&mut body, topic);
    if level >= LEVEL_V5 {
        body.push(0);
    }
    body.extend_from_slice(payload);
    packet(PUBLISH, retain as u8, &body)
}

/// Topic name of a QoS 0 PUBLISH; the payload is deliberately not returned.
pub fn publish_topic(raw: &RawPacket<'_>) -> Result<String, ProtoError> {
    if raw.kind != PUBLISH {
        return Err(ProtoError::Unexpected(format!("packet type {}", raw.kind)));
    }
    if raw.flags & 0x06 != 0 {
        return malformed("only QoS 0 publishes are expected");
    }
    read_str(&mut Reader::new(raw.body))
}

pub fn encode_disconnect(level: u8) -> Vec<u8> {
    if level >= LEVEL_V5 {
        packet(DISCONNECT, 0, &[0])
    } else {
        packet(DISCONNECT, 0, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn connect_roundtrip() {
        let c = Connect::anonymous("scan-1", Some("https://scan.example/contact"));
        let bytes = c.encode();
        assert_eq!(bytes[0], 0x10);
        assert_eq!(Connect::decode(&bytes).unwrap(), c);

        let v3 = Connect {
            level: LEVEL_V311,
            client_id: "x".into(),
            keep_alive: 10,
            username: Some("u".into()),
            password: Some(b"p".to_vec()),
            ..Default::default()
        };
        assert_eq!(Connect::decode(&v3.encode()).unwrap(), v3);
    }

    #[test]
    fn connack_codes() {
        let ok = Connack { level: LEVEL_V5, session_present: false, code: 0 };
        assert_eq!(ok.encode(), vec![0x20, 0x03, 0x00, 0x00, 0x00]);
        assert_eq!(Connack::decode(&ok.encode()).unwrap().access(), ConnackAccess::Accepted);

        let denied = Connack { level: LEVEL_V5, session_present: false, code: 0x87 };
        assert_eq!(Connack::decode(&denied.encode()).unwrap().access(), ConnackAccess::AuthRequired);

        // 3.1.1 "not authorized"
        let v3 = Connack::decode(&[0x20, 0x02, 0x00, 0x05]).unwrap();
        assert_eq!(v3.level, LEVEL_V311);
        assert_eq!(v3.access(), ConnackAccess::AuthRequired);

        assert!(Connack::decode(b"HTTP/1.1 400 Bad Request\r\n\r\n").is_err());
        assert!(Connack::decode(&[0x20, 0x02, 0x00]).is_err());
        assert!(Connack::decode(&[0x20, 0x02, 0x00, 0x09]).is_err());
    }

    #[test]
    fn packet_stream() {
        let mut stream = encode_suback(LEVEL_V5, 1, &[0]);
        stream.extend(encode_publish(LEVEL_V5, "home/temp", b"21.5", true));
        stream.extend(encode_publish(LEVEL_V5, "home/door", b"open", true));
        let packets = split_packets(&stream).unwrap();
        assert_eq!(packets.len(), 3);
        assert_eq!(publish_topic(&packets[1]).unwrap(), "home/temp");
        assert_eq!(publish_topic(&packets[2]).unwrap(), "home/door");

        let sub = encode_subscribe(LEVEL_V5, 7, "#");
        let raw = split_packets(&sub).unwrap();
        assert_eq!(decode_subscribe(LEVEL_V5, &raw[0]).unwrap(), (7, vec!["#".to_string()]));
    }

    #[test]
    fn varint_boundaries() {
        for v in [0u32, 127, 128, 16_383, 16_384, 2_097_151, 268_435_455] {
            let mut out = Vec::new();
            encode_varint(v, &mut out);
            assert_eq!(read_varint(&mut Reader::new(&out)).unwrap(), v);
        }
    }
}
