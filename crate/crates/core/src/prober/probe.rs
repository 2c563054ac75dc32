use sha2::{Digest, Sha256};

use crate::clock::SimTime;
use crate::proto::cert::CertSummary;
use crate::proto::tls::{self, Offer};

use super::app::app_handshake;
use super::channel::{Channel, ChannelError};
use super::dispatch::{Connect, Dispatcher};
use super::politeness::PolitenessPolicy;
use super::{AppStatus, ProbeOutcome, ProberConfig, Target, TlsParams, TlsStatus, TransportStatus};

/// Result of one connection: transport, optional (D)TLS and whatever the
/// body produced inside the channel.
#[derive(Debug, Clone)]
pub struct SessionResult<R> {
    pub transport: TransportStatus,
    pub tls: TlsStatus,
    pub result: Option<R>,
    pub bytes: u64,
}

pub struct Prober<'d> {
    dispatcher: &'d dyn Dispatcher,
    config: ProberConfig,
    policy: PolitenessPolicy,
}

impl<'d> Prober<'d> {
    pub fn new(dispatcher: &'d dyn Dispatcher, config: ProberConfig, policy: PolitenessPolicy) -> Self {
        Prober { dispatcher, config, policy }
    }

    pub fn config(&self) -> &ProberConfig {
        &self.config
    }

    pub fn validation_offer(&self) -> Offer {
        Offer {
            suites: self.config.offer.clone(),
            allow_tls13: true,
            allow_tls12: true,
        }
    }

    /// Connects, optionally completes a (D)TLS handshake with `offer`, and
    /// runs `body` on the resulting channel. Bodies never see a channel
    /// whose transport failed.
    pub fn with_session<R>(
        &self,
        target: &Target,
        offer: Option<&Offer>,
        body: impl FnOnce(&mut Channel) -> R,
    ) -> SessionResult<R> {
        let (conn, _) = self.dispatcher.connect(target, self.config.transport_timeout);
        let session = match conn {
            Connect::Established(s) => s,
            other => {
                let transport = match other {
                    Connect::Refused => TransportStatus::Refused,
                    Connect::Faulty => TransportStatus::FaultyTransport,
                    _ => TransportStatus::Timeout,
                };
                return SessionResult { transport, tls: TlsStatus::NotAttempted, result: None, bytes: 0 };
            }
        };
        let mut ch = Channel::new(
            session,
            target.spec.transport(),
            self.policy.mqtt_traffic_max,
            self.policy.mqtt_session_max,
        );
        let mut tls = TlsStatus::NotAttempted;
        let mut result = None;
        let proceed = match offer {
            None => true,
            Some(offer) => match self.tls_handshake(&mut ch, target, offer) {
                Ok(params) => {
                    tls = TlsStatus::Completed(params);
                    true
                }
                Err(reason) => {
                    tls = TlsStatus::Failed { reason };
                    false
                }
            },
        };
        if proceed {
            result = Some(body(&mut ch));
        }
        let transport = ch.transport().unwrap_or(TransportStatus::Timeout);
        if transport != TransportStatus::Established {
            tls = TlsStatus::NotAttempted;
            result = None;
        }
        SessionResult { transport, tls, result, bytes: ch.bytes() }
    }

    fn tls_handshake(&self, ch: &mut Channel, target: &Target, offer: &Offer) -> Result<TlsParams, String> {
        let mut h = Sha256::new();
        h.update(target.address.octets());
        h.update(target.spec.port().to_be_bytes());
        h.update(offer.suites.iter().flat_map(|s| s.to_be_bytes()).collect::<Vec<u8>>());
        let random: [u8; 32] = h.finalize().into();
        let hello = tls::client_hello(ch.flavor(), offer, random);
        let reply = ch.raw_roundtrip(&hello, self.config.app_timeout).map_err(|e| match e {
            ChannelError::Silence => "no response to ClientHello".to_string(),
            other => format!("{other:?}"),
        })?;
        let flight = tls::parse_server_flight(ch.flavor(), offer, &reply).map_err(|f| f.to_string())?;
        let certificate = flight.certificates.first().and_then(|c| CertSummary::decode(c).ok());
        ch.secure(flight.hello.version);
        Ok(TlsParams::new(flight.hello.version, flight.hello.suite, certificate))
    }

    /// Validation probe: plaintext on the standard port, (D)TLS on the
    /// secure port, followed by the protocol's first exchange.
    pub fn probe(&self, target: &Target, at: SimTime) -> ProbeOutcome {
        self.probe_as(target, at, target.spec.is_secured())
    }

    /// Like [`Prober::probe`], with (D)TLS chosen explicitly; `secure` on a
    /// standard port reaches deployments known to speak (D)TLS there.
    pub fn probe_as(&self, target: &Target, at: SimTime, secure: bool) -> ProbeOutcome {
        let offer = secure.then(|| self.validation_offer());
        let sr = self.with_session(target, offer.as_ref(), |ch| app_handshake(ch, target, &self.config));
        let app = sr.result.unwrap_or(AppStatus::NotAttempted);
        ProbeOutcome {
            target: *target,
            timestamp: at,
            transport: sr.transport,
            tls: sr.tls,
            tls_on_standard_port: secure && !target.spec.is_secured() && app.is_valid(),
            app,
            bytes_exchanged: sr.bytes,
            fallback_timestamp: None,
        }
    }

    /// One (D)TLS retry on the standard port after an unsuccessful
    /// plaintext attempt. A failed retry only records the failure.
    pub fn tls_fallback(&self, outcome: &ProbeOutcome, at: SimTime) -> ProbeOutcome {
        let mut out = outcome.clone();
        if !outcome.wants_tls_fallback() {
            return out;
        }
        let target = outcome.target;
        let offer = self.validation_offer();
        let sr = self.with_session(&target, Some(&offer), |ch| app_handshake(ch, &target, &self.config));
        out.fallback_timestamp = Some(at);
        out.bytes_exchanged += sr.bytes;
        match sr.tls {
            TlsStatus::Completed(params) => {
                out.tls = TlsStatus::Completed(params);
                if let Some(app) = sr.result.filter(AppStatus::is_valid) {
                    out.app = app;
                    out.tls_on_standard_port = true;
                }
            }
            TlsStatus::Failed { reason } => out.tls = TlsStatus::Failed { reason },
            TlsStatus::NotAttempted => {
                out.tls = TlsStatus::Failed {
                    reason: format!("transport {:?} on retry", sr.transport),
                }
            }
        }
        out
    }
}
