//! Certificate summaries.
//!
//! Certificates travel inside a regular TLS Certificate handshake message,
//! but the entry body is a compact tag-length-value record instead of DER:
//! only the fields the assessor checks are carried. The fingerprint is the
//! SHA-256 of those entry bytes, as it would be of a DER certificate.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{malformed, ProtoError, Reader};

const MAGIC: &[u8; 4] = b"CSv1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CertSummary {
    pub common_name: String,
    pub san_names: Vec<String>,
    pub signature_algorithm: String,
    pub public_key_algorithm: String,
    pub public_key_bits: u32,
    pub not_before: String,
    pub not_after: String,
    pub fingerprint: String,
}

impl CertSummary {
    pub fn new(
        common_name: &str,
        san_names: Vec<String>,
        signature_algorithm: &str,
        public_key_algorithm: &str,
        public_key_bits: u32,
        validity: (&str, &str),
    ) -> Self {
        let mut c = CertSummary {
            common_name: common_name.to_string(),
            san_names,
            signature_algorithm: signature_algorithm.to_string(),
            public_key_algorithm: public_key_algorithm.to_string(),
            public_key_bits,
            not_before: validity.0.to_string(),
            not_after: validity.1.to_string(),
            fingerprint: String::new(),
        };
        c.fingerprint = hex::encode(Sha256::digest(c.encode()));
        c
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let mut field = |tag: u8, v: &[u8]| {
            out.push(tag);
            out.extend_from_slice(&(v.len() as u16).to_be_bytes());
            out.extend_from_slice(v);
        };
        field(1, self.common_name.as_bytes());
        for s in &self.san_names {
            field(2, s.as_bytes());
        }
        field(3, self.signature_algorithm.as_bytes());
        field(4, self.public_key_algorithm.as_bytes());
        field(5, &self.public_key_bits.to_be_bytes());
        field(6, self.not_before.as_bytes());
        field(7, self.not_after.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<CertSummary, ProtoError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return malformed("unknown certificate encoding");
        }
        let mut c = CertSummary {
            common_name: String::new(),
            san_names: Vec::new(),
            signature_algorithm: String::new(),
            public_key_algorithm: String::new(),
            public_key_bits: 0,
            not_before: String::new(),
            not_after: String::new(),
            fingerprint: hex::encode(Sha256::digest(bytes)),
        };
        while !r.is_empty() {
            let tag = r.u8()?;
            let n = r.u16_be()? as usize;
            let v = r.take(n)?;
            let text = || String::from_utf8_lossy(v).into_owned();
            match tag {
                1 => c.common_name = text(),
                2 => c.san_names.push(text()),
                3 => c.signature_algorithm = text(),
                4 => c.public_key_algorithm = text(),
                5 => {
                    let b: [u8; 4] = v.try_into().or_else(|_| malformed("key size field"))?;
                    c.public_key_bits = u32::from_be_bytes(b);
                }
                6 => c.not_before = text(),
                7 => c.not_after = text(),
                other => return malformed(format!("unknown certificate field {other}")),
            }
        }
        Ok(c)
    }

    pub fn is_rsa(&self) -> bool {
        self.public_key_algorithm.eq_ignore_ascii_case("rsa")
    }
}
