//! Socket-backed dispatcher for probing real hosts.
//!
//! Connection refusal and timeouts map directly; malformed transport
//! packets cannot be observed through the socket API, so `Faulty` is never
//! produced here.

use std::io::{ErrorKind, Read, Write};
use std::net::{IpAddr, SocketAddr, TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use crate::model::Transport;

use super::dispatch::{udp_datagram, Connect, Dispatcher, Exchange, Reply, Session};
use super::Target;

/// How long a stream read waits for further segments once data arrived.
const QUIET: Duration = Duration::from_millis(250);

#[derive(Debug, Default, Clone, Copy)]
pub struct SocketDispatcher {
    /// Added to every destination port; zero outside of local testing.
    pub port_offset: u16,
}

impl Dispatcher for SocketDispatcher {
    fn connect(&self, target: &Target, timeout: Duration) -> (Connect, Duration) {
        let addr = SocketAddr::new(IpAddr::V6(target.address.to_ipv6()), target.spec.port().wrapping_add(self.port_offset));
        let started = Instant::now();
        match target.spec.transport() {
            Transport::StreamTcp => match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => (Connect::Established(Box::new(TcpSession(s))), started.elapsed()),
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => (Connect::Refused, started.elapsed()),
                Err(_) => (Connect::Timeout, started.elapsed()),
            },
            Transport::DatagramUdp => {
                let sock = UdpSocket::bind("[::]:0").and_then(|s| s.connect(addr).map(|_| s));
                match sock {
                    Ok(s) => (Connect::Established(Box::new(UdpSession { sock: s, port: target.spec.port() })), started.elapsed()),
                    Err(_) => (Connect::Refused, started.elapsed()),
                }
            }
        }
    }
}

struct TcpSession(TcpStream);

impl Session for TcpSession {
    fn exchange(&mut self, payload: &[u8], timeout: Duration) -> Exchange {
        let started = Instant::now();
        if self.0.write_all(payload).is_err() {
            return Exchange { reply: Reply::Closed, elapsed: started.elapsed() };
        }
        let mut data = Vec::new();
        let mut buf = [0u8; 16 * 1024];
        loop {
            let wait = if data.is_empty() { timeout.saturating_sub(started.elapsed()) } else { QUIET };
            if wait.is_zero() || self.0.set_read_timeout(Some(wait)).is_err() {
                break;
            }
            match self.0.read(&mut buf) {
                Ok(0) => {
                    if data.is_empty() {
                        return Exchange { reply: Reply::Closed, elapsed: started.elapsed() };
                    }
                    break;
                }
                Ok(n) => data.extend_from_slice(&buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                Err(_) if data.is_empty() => return Exchange { reply: Reply::Closed, elapsed: started.elapsed() },
                Err(_) => break,
            }
        }
        let reply = if data.is_empty() { Reply::Silence } else { Reply::Data(data) };
        Exchange { reply, elapsed: started.elapsed() }
    }
}

struct UdpSession {
    sock: UdpSocket,
    port: u16,
}

impl Session for UdpSession {
    fn exchange(&mut self, payload: &[u8], timeout: Duration) -> Exchange {
        let started = Instant::now();
        if self.sock.send(payload).is_err() {
            return Exchange { reply: Reply::Closed, elapsed: started.elapsed() };
        }
        let _ = self.sock.set_read_timeout(Some(timeout.max(Duration::from_millis(1))));
        let mut buf = [0u8; 65_535];
        let reply = match self.sock.recv(&mut buf) {
            // the kernel already validated the UDP header; rebuild it
            Ok(n) => Reply::Data(udp_datagram(self.port, 0, &buf[..n])),
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => Reply::Closed,
            Err(_) => Reply::Silence,
        };
        Exchange { reply, elapsed: started.elapsed() }
    }
}
