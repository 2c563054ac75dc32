//! Real-socket front for one plant, for manual smoke tests against the
//! socket dispatcher. Acceptance tests never go through here.

use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{IpAddr, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::addr::Addr128;
use crate::model::{ProtocolSpec, Transport};
use crate::prober::dispatch::{udp_payload, Connect, Dispatcher, Reply, Session};
use crate::prober::Target;

use super::Universe;

const POLL: Duration = Duration::from_millis(100);
const QUIET: Duration = Duration::from_millis(150);
const IDLE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    pub bind: IpAddr,
    /// Added to every protocol port, so nothing needs privileges.
    pub port_offset: u16,
}

/// Listeners for both ports of the plant at `address`; they run until
/// `stop` is set. Returns the bound socket addresses and thread handles.
pub fn serve_plant(
    universe: Arc<Universe>,
    address: Addr128,
    opts: ServeOptions,
    stop: Arc<AtomicBool>,
) -> std::io::Result<(Vec<SocketAddr>, Vec<JoinHandle<()>>)> {
    let plant = universe
        .plant_at(address)
        .ok_or_else(|| std::io::Error::new(ErrorKind::NotFound, format!("no plant at {address}")))?;
    let protocol = plant.protocol;
    let mut bound = Vec::new();
    let mut handles = Vec::new();
    for spec in [ProtocolSpec::standard(protocol), ProtocolSpec::secured(protocol)] {
        let local = SocketAddr::new(opts.bind, spec.port().wrapping_add(opts.port_offset));
        let target = Target::new(address, spec);
        let (u, stop) = (Arc::clone(&universe), Arc::clone(&stop));
        match spec.transport() {
            Transport::StreamTcp => {
                let l = TcpListener::bind(local)?;
                l.set_nonblocking(true)?;
                bound.push(l.local_addr()?);
                handles.push(thread::spawn(move || accept_loop(l, u, target, stop)));
            }
            Transport::DatagramUdp => {
                let s = UdpSocket::bind(local)?;
                s.set_read_timeout(Some(POLL))?;
                bound.push(s.local_addr()?);
                handles.push(thread::spawn(move || datagram_loop(s, u, target, stop)));
            }
        }
    }
    Ok((bound, handles))
}

fn accept_loop(l: TcpListener, u: Arc<Universe>, target: Target, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match l.accept() {
            Ok((stream, _)) => {
                let u = Arc::clone(&u);
                thread::spawn(move || {
                    if let (Connect::Established(s), _) = u.connect(&target, IDLE) {
                        let _ = stream_loop(stream, s);
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept on {}: {e}", target.spec);
                thread::sleep(POLL);
            }
        }
    }
}

/// Reads one client flight (until the client pauses), hands it to the
/// session and writes the answer back.
fn stream_loop(mut stream: TcpStream, mut session: Box<dyn Session>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut buf = [0u8; 16 * 1024];
    loop {
        let mut flight = Vec::new();
        stream.set_read_timeout(Some(IDLE))?;
        loop {
            match stream.read(&mut buf) {
                Ok(0) => return Ok(()),
                Ok(n) => {
                    flight.extend_from_slice(&buf[..n]);
                    stream.set_read_timeout(Some(QUIET))?;
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) && !flight.is_empty() => break,
                Err(e) => return Err(e),
            }
        }
        match session.exchange(&flight, IDLE).reply {
            Reply::Data(d) => stream.write_all(&d)?,
            Reply::Closed => return stream.shutdown(std::net::Shutdown::Both),
            Reply::Silence => {}
        }
    }
}

fn datagram_loop(sock: UdpSocket, u: Arc<Universe>, target: Target, stop: Arc<AtomicBool>) {
    let mut sessions: HashMap<SocketAddr, Box<dyn Session>> = HashMap::new();
    let mut buf = [0u8; 65_535];
    while !stop.load(Ordering::Relaxed) {
        let Ok((n, peer)) = sock.recv_from(&mut buf) else {
            continue;
        };
        let session = sessions.entry(peer).or_insert_with(|| match u.connect(&target, IDLE).0 {
            Connect::Established(s) => s,
            _ => Box::new(super::responder::Void),
        });
        if let Reply::Data(d) = session.exchange(&buf[..n], IDLE).reply {
            // a malformed UDP header cannot be reproduced through the socket
            // API; the payload goes out as is
            let payload = udp_payload(&d).unwrap_or(&d[8.min(d.len())..]);
            let _ = sock.send_to(payload, peer);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{build_universe, AddressSpec, Behavior, DeploymentSpec, UniverseSpec};
    use crate::model::Protocol;
    use crate::prober::net::SocketDispatcher;
    use crate::prober::{AppStatus, PolitenessPolicy, Prober, ProberConfig};
    use crate::clock::SimTime;

    #[test]
    fn socket_smoke_test() {
        let plant_addr: Addr128 = "2001:db8::77".parse().unwrap();
        let mut spec = UniverseSpec::new(4);
        spec.deployments.push(DeploymentSpec {
            address: AddressSpec::Fixed(plant_addr),
            protocol: Protocol::Mqtt,
            behaviors: vec![Behavior::ValidPlain, Behavior::ValidTls, Behavior::AnonymousOpen],
        });
        let (u, _) = build_universe(&spec).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let opts = ServeOptions { bind: "127.0.0.1".parse().unwrap(), port_offset: 31_000 };
        let (_, handles) = serve_plant(Arc::new(u), plant_addr, opts, Arc::clone(&stop)).expect("bind loopback");

        let dispatcher = SocketDispatcher { port_offset: 31_000 };
        let config = ProberConfig { app_timeout: Duration::from_secs(2), ..ProberConfig::default() };
        let prober = Prober::new(&dispatcher, config, PolitenessPolicy::default());
        let loopback: Addr128 = "::ffff:127.0.0.1".parse().unwrap();
        for spec in [ProtocolSpec::standard(Protocol::Mqtt), ProtocolSpec::secured(Protocol::Mqtt)] {
            let o = prober.probe(&Target::new(loopback, spec), SimTime::ZERO);
            assert!(matches!(o.app, AppStatus::Valid(_)), "{spec}: {o:?}");
            assert_eq!(o.tls.is_completed(), spec.is_secured());
        }
        stop.store(true, Ordering::Relaxed);
        for h in handles {
            h.join().unwrap();
        }
    }
}
