//! CoAP message format (RFC 7252) with the subset of options needed for
//! resource discovery.

use super::{malformed, ProtoError, Reader};

pub const OPTION_URI_PATH: u16 = 11;
pub const OPTION_CONTENT_FORMAT: u16 = 12;
pub const CONTENT_FORMAT_LINK: u16 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    Confirmable,
    NonConfirmable,
    Acknowledgement,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub mtype: MsgType,
    /// (class, detail), e.g. (2, 5) for 2.05 Content.
    pub code: (u8, u8),
    pub message_id: u16,
    pub token: Vec<u8>,
    pub options: Vec<(u16, Vec<u8>)>,
    pub payload: Vec<u8>,
}

fn ext_nibble(v: u16) -> (u8, Vec<u8>) {
    match v {
        0..=12 => (v as u8, vec![]),
        13..=268 => (13, vec![(v - 13) as u8]),
        _ => (14, (v - 269).to_be_bytes().to_vec()),
    }
}

fn read_ext(r: &mut Reader<'_>, nib: u8) -> Result<u16, ProtoError> {
    match nib {
        0..=12 => Ok(nib as u16),
        13 => Ok(r.u8()? as u16 + 13),
        14 => r.u16_be()?.checked_add(269).ok_or_else(|| ProtoError::Malformed("option overflow".into())),
        _ => malformed("reserved option nibble 15"),
    }
}

impl Message {
    pub fn get_well_known_core(message_id: u16, token: &[u8]) -> Message {
        Message {
            mtype: MsgType::Confirmable,
            code: (0, 1),
            message_id,
            token: token.to_vec(),
            options: vec![
                (OPTION_URI_PATH, b".well-known".to_vec()),
                (OPTION_URI_PATH, b"core".to_vec()),
            ],
            payload: Vec::new(),
        }
    }

    pub fn uri_path(&self) -> String {
        let segs: Vec<String> = self
            .options
            .iter()
            .filter(|(n, _)| *n == OPTION_URI_PATH)
            .map(|(_, v)| String::from_utf8_lossy(v).into_owned())
            .collect();
        format!("/{}", segs.join("/"))
    }

    pub fn encode(&self) -> Vec<u8> {
        let t = match self.mtype {
            MsgType::Confirmable => 0,
            MsgType::NonConfirmable => 1,
            MsgType::Acknowledgement => 2,
            MsgType::Reset => 3,
        };
        let mut out = vec![(1 << 6) | (t << 4) | self.token.len() as u8, (self.code.0 << 5) | self.code.1];
        out.extend_from_slice(&self.message_id.to_be_bytes());
        out.extend_from_slice(&self.token);
        let mut opts = self.options.clone();
        opts.sort_by_key(|(n, _)| *n);
        let mut last = 0;
        for (num, val) in &opts {
            let (dn, dx) = ext_nibble(num - last);
            let (ln, lx) = ext_nibble(val.len() as u16);
            out.push((dn << 4) | ln);
            out.extend(dx);
            out.extend(lx);
            out.extend_from_slice(val);
            last = *num;
        }
        if !self.payload.is_empty() {
            out.push(0xff);
            out.extend_from_slice(&self.payload);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Message, ProtoError> {
        let mut r = Reader::new(buf);
        let b0 = r.u8()?;
        if b0 >> 6 != 1 {
            return malformed("CoAP version must be 1");
        }
        let mtype = match (b0 >> 4) & 0x3 {
            0 => MsgType::Confirmable,
            1 => MsgType::NonConfirmable,
            2 => MsgType::Acknowledgement,
            _ => MsgType::Reset,
        };
        let tkl = (b0 & 0x0f) as usize;
        if tkl > 8 {
            return malformed("token length above 8");
        }
        let c = r.u8()?;
        let message_id = r.u16_be()?;
        let token = r.take(tkl)?.to_vec();
        let mut options = Vec::new();
        let mut payload = Vec::new();
        let mut num = 0u16;
        while !r.is_empty() {
            let b = r.u8()?;
            if b == 0xff {
                payload = r.rest().to_vec();
                if payload.is_empty() {
                    return malformed("payload marker without payload");
                }
                break;
            }
            let delta = read_ext(&mut r, b >> 4)?;
            let len = read_ext(&mut r, b & 0x0f)?;
            num = num.checked_add(delta).ok_or_else(|| ProtoError::Malformed("option number overflow".into()))?;
            options.push((num, r.take(len as usize)?.to_vec()));
        }
        Ok(Message {
            mtype,
            code: (c >> 5, c & 0x1f),
            message_id,
            token,
            options,
            payload,
        })
    }
}

/// Resource paths listed in a CoRE link-format document.
pub fn parse_link_format(payload: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(payload)
        .split(',')
        .filter_map(|link| {
            let link = link.trim();
            let start = link.find('<')?;
            let end = link[start..].find('>')? + start;
            Some(link[start + 1..end].to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discovery_request_bytes() {
        let m = Message::get_well_known_core(0x1234, &[0xab]);
        let bytes = m.encode();
        // ver 1, CON, TKL 1; GET; mid; token; Uri-Path ".well-known"; Uri-Path "core"
        assert_eq!(&bytes[..5], &[0x41, 0x01, 0x12, 0x34, 0xab]);
        assert_eq!(bytes[5], 0xbb);
        assert_eq!(&bytes[6..17], b".well-known");
        assert_eq!(bytes[17], 0x04);
        assert_eq!(Message::decode(&bytes).unwrap(), m);
        assert_eq!(m.uri_path(), "/.well-known/core");
    }

    #[test]
    fn response_with_payload_and_long_option() {
        let m = Message {
            mtype: MsgType::Acknowledgement,
            code: (2, 5),
            message_id: 7,
            token: vec![1, 2, 3, 4],
            options: vec![
                (OPTION_CONTENT_FORMAT, vec![CONTENT_FORMAT_LINK as u8]),
                (2000, vec![0; 300]),
            ],
            payload: b"</sensors/temp>;rt=\"temperature\",</actuators/led>".to_vec(),
        };
        let back = Message::decode(&m.encode()).unwrap();
        assert_eq!(back, m);
        assert_eq!(parse_link_format(&back.payload), vec!["/sensors/temp", "/actuators/led"]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Message::decode(b"HTTP/1.1").is_err());
        assert!(Message::decode(&[0x4f, 0, 0, 0]).is_err());
        assert!(Message::decode(&[0x40, 0x45, 0, 1, 0xff]).is_err());
    }
}
