//! 128-bit addresses and CIDR prefixes.
//!
//! Addresses are stored as a plain `u128` in network order, so the most
//! significant bit is the first bit on the wire. Nybble 0 is the most
//! significant nybble.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of nybbles in an address.
pub const NYBBLES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("malformed IPv6 address at position {position}")]
    Malformed { position: usize },
    #[error("invalid prefix length {0}")]
    InvalidPrefixLength(String),
    #[error("prefix {0} has bits set below its length")]
    HostBitsSet(String),
}

/// An IPv6 address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Addr128(pub u128);

impl Addr128 {
    pub const UNSPECIFIED: Addr128 = Addr128(0);

    pub const fn new(value: u128) -> Self {
        Addr128(value)
    }

    pub const fn value(self) -> u128 {
        self.0
    }

    /// Nybble at `index`, most significant first.
    pub fn nybble(self, index: usize) -> u8 {
        debug_assert!(index < NYBBLES);
        ((self.0 >> (124 - 4 * index)) & 0xf) as u8
    }

    pub fn with_nybble(self, index: usize, value: u8) -> Self {
        debug_assert!(index < NYBBLES && value < 16);
        let shift = 124 - 4 * index;
        Addr128((self.0 & !(0xf_u128 << shift)) | ((value as u128) << shift))
    }

    pub fn nybbles(self) -> [u8; NYBBLES] {
        let mut out = [0u8; NYBBLES];
        for (i, n) in out.iter_mut().enumerate() {
            *n = self.nybble(i);
        }
        out
    }

    pub fn from_nybbles(nybbles: &[u8; NYBBLES]) -> Self {
        Addr128(
            nybbles
                .iter()
                .fold(0u128, |acc, &n| (acc << 4) | (n & 0xf) as u128),
        )
    }

    /// Bit at `index`, where bit 0 is the most significant.
    pub fn bit(self, index: u8) -> bool {
        debug_assert!(index < 128);
        (self.0 >> (127 - index as u32)) & 1 == 1
    }

    pub fn to_ipv6(self) -> Ipv6Addr {
        Ipv6Addr::from(self.0)
    }

    pub fn octets(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }
}

impl From<Ipv6Addr> for Addr128 {
    fn from(a: Ipv6Addr) -> Self {
        Addr128(u128::from(a))
    }
}

impl From<Addr128> for Ipv6Addr {
    fn from(a: Addr128) -> Self {
        Ipv6Addr::from(a.0)
    }
}

impl fmt::Display for Addr128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_ipv6(), f)
    }
}

impl fmt::Debug for Addr128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Addr128({})", self)
    }
}

impl FromStr for Addr128 {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_address(s)
    }
}

impl Serialize for Addr128 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Addr128 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses an IPv6 literal. On failure the error carries the 0-based
/// character offset where parsing went wrong.
pub fn parse_address(text: &str) -> Result<Addr128, AddrError> {
    if let Some(pos) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(AddrError::Malformed { position: pos });
    }
    if text.is_empty() {
        return Err(AddrError::Malformed { position: 0 });
    }

    let groups = match text.find("::") {
        Some(gap) => {
            if let Some(again) = text[gap + 1..].find("::") {
                return Err(AddrError::Malformed {
                    position: gap + 1 + again + 1,
                });
            }
            let head = parse_groups(&text[..gap], 0, false)?;
            let tail = parse_groups(&text[gap + 2..], gap + 2, true)?;
            if head.len() + tail.len() > 7 {
                return Err(AddrError::Malformed { position: gap });
            }
            let mut groups = head;
            groups.resize(8 - tail.len(), 0);
            groups.extend(tail);
            groups
        }
        None => {
            let groups = parse_groups(text, 0, true)?;
            if groups.len() != 8 {
                return Err(AddrError::Malformed {
                    position: text.len(),
                });
            }
            groups
        }
    };

    Ok(Addr128(
        groups.iter().fold(0u128, |acc, &g| (acc << 16) | g as u128),
    ))
}

fn parse_groups(s: &str, offset: usize, allow_v4_tail: bool) -> Result<Vec<u16>, AddrError> {
    let mut out = Vec::new();
    if s.is_empty() {
        return Ok(out);
    }
    let pieces: Vec<&str> = s.split(':').collect();
    let mut at = offset;
    for (i, piece) in pieces.iter().enumerate() {
        let last = i + 1 == pieces.len();
        if piece.is_empty() {
            return Err(AddrError::Malformed { position: at });
        }
        if last && allow_v4_tail && piece.contains('.') {
            let v4: Ipv4Addr = piece
                .parse()
                .map_err(|_| AddrError::Malformed { position: at })?;
            let o = v4.octets();
            out.push(u16::from_be_bytes([o[0], o[1]]));
            out.push(u16::from_be_bytes([o[2], o[3]]));
        } else {
            if let Some(bad) = piece.bytes().position(|b| !b.is_ascii_hexdigit()) {
                return Err(AddrError::Malformed { position: at + bad });
            }
            if piece.len() > 4 {
                return Err(AddrError::Malformed { position: at + 4 });
            }
            out.push(u16::from_str_radix(piece, 16).expect("validated hex group"));
        }
        at += piece.len() + 1;
    }
    Ok(out)
}

/// Splits an address into its 32 nybbles, most significant first.
pub fn nybble_decompose(addr: Addr128) -> [u8; NYBBLES] {
    addr.nybbles()
}

pub fn nybble_recompose(nybbles: &[u8; NYBBLES]) -> Addr128 {
    Addr128::from_nybbles(nybbles)
}

fn mask(len: u8) -> u128 {
    match len {
        0 => 0,
        l => u128::MAX << (128 - l as u32),
    }
}

/// A CIDR prefix with all host bits cleared.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    base: Addr128,
    len: u8,
}

impl Prefix {
    pub const ALL: Prefix = Prefix {
        base: Addr128(0),
        len: 0,
    };

    /// Strict constructor: rejects bases with host bits set.
    pub fn new(base: Addr128, len: u8) -> Result<Self, AddrError> {
        if len > 128 {
            return Err(AddrError::InvalidPrefixLength(len.to_string()));
        }
        if base.0 & !mask(len) != 0 {
            return Err(AddrError::HostBitsSet(format!("{}/{}", base, len)));
        }
        Ok(Prefix { base, len })
    }

    /// Clears host bits of `addr` below `len`.
    pub fn truncating(addr: Addr128, len: u8) -> Self {
        let len = len.min(128);
        Prefix {
            base: Addr128(addr.0 & mask(len)),
            len,
        }
    }

    pub fn host(addr: Addr128) -> Self {
        Prefix { base: addr, len: 128 }
    }

    pub fn base(&self) -> Addr128 {
        self.base
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_host(&self) -> bool {
        self.len == 128
    }

    pub fn last(&self) -> Addr128 {
        Addr128(self.base.0 | !mask(self.len))
    }

    /// Number of addresses covered, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        if self.len == 0 {
            u128::MAX
        } else {
            1u128 << (128 - self.len as u32)
        }
    }

    pub fn contains(&self, addr: Addr128) -> bool {
        addr.0 & mask(self.len) == self.base.0
    }

    /// True when `other` lies entirely inside `self`.
    pub fn covers(&self, other: &Prefix) -> bool {
        self.len <= other.len && self.contains(other.base)
    }
}

/// True iff the top `p.len()` bits of `a` match the prefix.
pub fn prefix_contains(p: &Prefix, a: Addr128) -> bool {
    p.contains(a)
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.len)
    }
}

impl fmt::Debug for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Prefix({})", self)
    }
}

impl FromStr for Prefix {
    type Err = AddrError;

    /// Accepts `addr/len` (host bits are cleared) or a bare address as a /128.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((addr, len)) => {
                let base = parse_address(addr)?;
                let len: u8 = len
                    .parse()
                    .ok()
                    .filter(|l| *l <= 128)
                    .ok_or_else(|| AddrError::InvalidPrefixLength(len.to_string()))?;
                Ok(Prefix::truncating(base, len))
            }
            None => Ok(Prefix::host(parse_address(s)?)),
        }
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(s: &str) -> Addr128 {
        s.parse().unwrap()
    }

    #[test]
    fn canonical_form() {
        assert_eq!(a("2001:DB8::1").to_string(), "2001:db8::1");
        assert_eq!(a("2001:0db8:0000:0000:0000:0000:0000:0001").to_string(), "2001:db8::1");
        assert_eq!(a("::"), Addr128(0));
        assert_eq!(a("::").to_string(), "::");
        assert_eq!(a("::ffff:192.0.2.1").to_string(), "::ffff:192.0.2.1");
    }

    #[test]
    fn malformed_positions() {
        assert_eq!(
            parse_address("2001:::1"),
            Err(AddrError::Malformed { position: 6 })
        );
        assert_eq!(
            parse_address("2001:db8::g"),
            Err(AddrError::Malformed { position: 10 })
        );
        assert_eq!(
            parse_address("12345::"),
            Err(AddrError::Malformed { position: 4 })
        );
        assert!(parse_address("").is_err());
        assert!(parse_address("1:2:3:4:5:6:7").is_err());
        assert!(parse_address("1:2:3:4:5:6:7:8:9").is_err());
        assert!(parse_address("1::2::3").is_err());
        assert!(parse_address(":1:2:3:4:5:6:7").is_err());
        assert!(parse_address("1:2:3:4:5:6:7::8").is_err());
    }

    #[test]
    fn nybble_examples() {
        let mut expected = [0u8; 32];
        expected[..8].copy_from_slice(&[2, 0, 0, 1, 0, 13, 11, 8]);
        expected[31] = 1;
        assert_eq!(nybble_decompose(a("2001:db8::1")), expected);
        assert_eq!(nybble_decompose(Addr128(0)), [0u8; 32]);
        assert_eq!(a("2001:db8::1").with_nybble(31, 0xf), a("2001:db8::f"));
    }

    #[test]
    fn prefix_examples() {
        let p: Prefix = "2001:db8::/32".parse().unwrap();
        assert!(prefix_contains(&p, a("2001:db8:1::5")));
        assert!(!prefix_contains(&p, a("2001:db9::5")));
        assert!(Prefix::ALL.contains(a("ffff::1")));
        let host = Prefix::host(a("2001:db8::1"));
        assert!(host.contains(a("2001:db8::1")));
        assert!(!host.contains(a("2001:db8::2")));
        assert_eq!("2001:db8::5/32".parse::<Prefix>().unwrap(), p);
        assert!(Prefix::new(a("2001:db8::5"), 32).is_err());
        assert!("2001:db8::/129".parse::<Prefix>().is_err());
        assert_eq!(p.last(), a("2001:db8:ffff:ffff:ffff:ffff:ffff:ffff"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn nybble_roundtrip(v in any::<u128>()) {
            let addr = Addr128(v);
            prop_assert_eq!(nybble_recompose(&nybble_decompose(addr)), addr);
        }

        #[test]
        fn text_roundtrip(v in any::<u128>()) {
            let addr = Addr128(v);
            prop_assert_eq!(parse_address(&addr.to_string()), Ok(addr));
        }
    }

    proptest! {
        #[test]
        fn containment_is_monotone(v in any::<u128>(), probe in any::<u128>(), l1 in 0u8..=128, l2 in 0u8..=128) {
            let (short, long) = (l1.min(l2), l1.max(l2));
            let inner = Prefix::truncating(Addr128(v), long);
            let outer = Prefix::truncating(Addr128(v), short);
            prop_assert!(outer.covers(&inner));
            if inner.contains(Addr128(probe)) {
                prop_assert!(outer.contains(Addr128(probe)));
            }
            prop_assert!(inner.contains(inner.base()));
        }
    }
}
