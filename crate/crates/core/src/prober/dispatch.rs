//! The network boundary. Everything above this trait is deterministic.

use std::time::Duration;

use super::Target;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    /// Stream: bytes read until the peer went quiet. Datagram: one raw UDP
    /// datagram including its 8-byte header.
    Data(Vec<u8>),
    Silence,
    /// Stream reset or closed; for datagrams an ICMP port-unreachable.
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub reply: Reply,
    pub elapsed: Duration,
}

pub trait Session: Send {
    /// Sends `payload` and collects the peer's answer, waiting at most
    /// `timeout`.
    fn exchange(&mut self, payload: &[u8], timeout: Duration) -> Exchange;
}

pub enum Connect {
    Established(Box<dyn Session>),
    Refused,
    Timeout,
    /// The peer answered the connection attempt with malformed packets.
    Faulty,
}

impl std::fmt::Debug for Connect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Connect::Established(_) => "Established",
            Connect::Refused => "Refused",
            Connect::Timeout => "Timeout",
            Connect::Faulty => "Faulty",
        })
    }
}

/// Opens sessions to targets. Datagram targets always yield a session;
/// reachability shows up in the first exchange.
pub trait Dispatcher: Sync {
    fn connect(&self, target: &Target, timeout: Duration) -> (Connect, Duration);
}

/// Builds the 8-byte UDP header a datagram dispatcher prepends to payloads.
pub fn udp_datagram(src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let mut d = Vec::with_capacity(payload.len() + 8);
    d.extend_from_slice(&src_port.to_be_bytes());
    d.extend_from_slice(&dst_port.to_be_bytes());
    d.extend_from_slice(&((payload.len() + 8) as u16).to_be_bytes());
    d.extend_from_slice(&[0, 0]);
    d.extend_from_slice(payload);
    d
}

/// Payload of a UDP datagram whose length field matches its size.
pub fn udp_payload(datagram: &[u8]) -> Option<&[u8]> {
    if datagram.len() < 8 {
        return None;
    }
    let len = u16::from_be_bytes([datagram[4], datagram[5]]) as usize;
    (len == datagram.len()).then(|| &datagram[8..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn udp_length_check() {
        let d = udp_datagram(5683, 40000, b"hello");
        assert_eq!(udp_payload(&d), Some(&b"hello"[..]));
        let mut bad = d.clone();
        bad[5] = 0xff;
        assert_eq!(udp_payload(&bad), None);
        assert_eq!(udp_payload(&d[..6]), None);
    }
}
