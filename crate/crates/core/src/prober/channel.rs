use std::time::Duration;

use crate::model::Transport;
use crate::proto::tls::{self, Flavor, TlsFailure};

use super::dispatch::{udp_payload, Reply, Session};
use super::TransportStatus;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelError {
    Silence,
    Closed,
    /// A datagram whose UDP length field disagrees with its size.
    Faulty,
    /// Session byte or duration cap reached; the session was closed.
    CapReached,
    Tls(TlsFailure),
}

/// A probe session with byte accounting, session caps, UDP framing checks
/// and, once secured, (D)TLS record wrapping.
pub struct Channel {
    session: Box<dyn Session>,
    flavor: Flavor,
    transport: Option<TransportStatus>,
    secured: Option<u16>,
    next_seq: u64,
    bytes: u64,
    elapsed: Duration,
    max_bytes: u64,
    max_duration: Duration,
    closed: bool,
}

impl Channel {
    pub fn new(session: Box<dyn Session>, transport: Transport, max_bytes: u64, max_duration: Duration) -> Self {
        let (flavor, status) = match transport {
            Transport::StreamTcp => (Flavor::Stream, Some(TransportStatus::Established)),
            Transport::DatagramUdp => (Flavor::Datagram, None),
        };
        Channel {
            session,
            flavor,
            transport: status,
            secured: None,
            next_seq: 1,
            bytes: 0,
            elapsed: Duration::ZERO,
            max_bytes,
            max_duration,
            closed: false,
        }
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// Stream channels are established on connect; datagram channels once
    /// the first well-formed reply arrives.
    pub fn transport(&self) -> Option<TransportStatus> {
        self.transport
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    pub fn secure(&mut self, version: u16) {
        self.secured = Some(version);
    }

    /// One request/response exchange without record wrapping.
    pub fn raw_roundtrip(&mut self, payload: &[u8], timeout: Duration) -> Result<Vec<u8>, ChannelError> {
        if self.closed {
            return Err(ChannelError::CapReached);
        }
        let sent = payload.len() as u64;
        if self.bytes + sent > self.max_bytes {
            self.closed = true;
            return Err(ChannelError::CapReached);
        }
        let remaining = self.max_duration.saturating_sub(self.elapsed);
        let ex = self.session.exchange(payload, timeout.min(remaining));
        self.bytes += sent;
        self.elapsed += ex.elapsed;
        let first = self.transport.is_none();
        let data = match ex.reply {
            Reply::Data(d) => d,
            Reply::Silence => {
                if first {
                    self.transport = Some(TransportStatus::Timeout);
                }
                if self.elapsed >= self.max_duration {
                    self.closed = true;
                    return Err(ChannelError::CapReached);
                }
                return Err(ChannelError::Silence);
            }
            Reply::Closed => {
                if first {
                    self.transport = Some(TransportStatus::Refused);
                }
                self.closed = true;
                return Err(ChannelError::Closed);
            }
        };
        let received = data.len() as u64;
        if self.bytes + received > self.max_bytes {
            self.bytes = self.max_bytes;
            self.closed = true;
            return Err(ChannelError::CapReached);
        }
        self.bytes += received;
        let payload = match self.flavor {
            Flavor::Stream => data,
            Flavor::Datagram => match udp_payload(&data) {
                Some(p) => p.to_vec(),
                None => {
                    if first {
                        self.transport = Some(TransportStatus::FaultyTransport);
                    }
                    return Err(ChannelError::Faulty);
                }
            },
        };
        if first {
            self.transport = Some(TransportStatus::Established);
        }
        Ok(payload)
    }

    /// Exchange of application bytes, inside (D)TLS records once secured.
    pub fn roundtrip(&mut self, payload: &[u8], timeout: Duration) -> Result<Vec<u8>, ChannelError> {
        let Some(version) = self.secured else {
            return self.raw_roundtrip(payload, timeout);
        };
        let wrapped = tls::wrap_application(self.flavor, version, self.next_seq, payload);
        self.next_seq += 1 + (payload.len() / (1 << 14)) as u64;
        let reply = self.raw_roundtrip(&wrapped, timeout)?;
        tls::unwrap_application(self.flavor, &reply).map_err(ChannelError::Tls)
    }
}
