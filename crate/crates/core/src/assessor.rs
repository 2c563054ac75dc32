//! Security grading of validated deployments: graded (D)TLS offers,
//! certificate checks against a guideline profile, and credential-free
//! access checks for MQTT and AMQP.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::addr::Addr128;
use crate::clock::SimTime;
use crate::model::{Protocol, ProtocolSpec};
use crate::prober::{
    amqp_anonymous_login, mqtt_visible_topics, AccessProbe, Campaign, Prober, Purpose, Target, TlsStatus,
    TransportStatus,
};
use crate::proto::cert::CertSummary;
use crate::proto::suites;
use crate::proto::tls::{self, Offer};
use crate::validator::DeploymentRecord;

const BUILTIN_PROFILE: &str = include_str!("../profiles/default.json");

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing profile: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown cipher suite {0:?} in profile")]
    UnknownSuite(String),
    #[error("profile lists no {0}")]
    Empty(&'static str),
}

/// The checkable subset of a TLS configuration guideline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineProfile {
    pub version: String,
    pub min_rsa_bits: u32,
    /// Hash families matched case-insensitively against the certificate's
    /// signature algorithm, ignoring punctuation ("sha1" hits
    /// "ecdsa-with-SHA1").
    pub banned_hashes: Vec<String>,
    pub banned_suites: Vec<String>,
    pub tls13_suite_list: Vec<String>,
}

fn squash(s: &str) -> String {
    s.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect()
}

fn codes(names: &[String]) -> Result<Vec<u16>, ProfileError> {
    names
        .iter()
        .map(|n| suites::code(n).ok_or_else(|| ProfileError::UnknownSuite(n.clone())))
        .collect()
}

impl GuidelineProfile {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PROFILE).expect("embedded profile is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let p: GuidelineProfile = serde_json::from_str(text)?;
        if p.banned_suites.is_empty() {
            return Err(ProfileError::Empty("banned_suites"));
        }
        if p.tls13_suite_list.is_empty() {
            return Err(ProfileError::Empty("tls13_suite_list"));
        }
        codes(&p.banned_suites)?;
        codes(&p.tls13_suite_list)?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn banned_suite_codes(&self) -> Vec<u16> {
        codes(&self.banned_suites).expect("checked on load")
    }

    pub fn tls13_suite_codes(&self) -> Vec<u16> {
        codes(&self.tls13_suite_list).expect("checked on load")
    }

    pub fn bans_hash(&self, signature_algorithm: &str) -> bool {
        let sig = squash(signature_algorithm);
        self.banned_hashes.iter().any(|h| sig.contains(&squash(h)))
    }

    pub fn bans_key(&self, cert: &CertSummary) -> bool {
        cert.is_rsa() && cert.public_key_bits < self.min_rsa_bits
    }

    pub fn bans_suite(&self, code: u16) -> bool {
        suites::name(code).is_some_and(|n| self.banned_suites.iter().any(|b| b == n))
    }

    /// Offer containing only the banned suites, capped at TLS 1.2.
    pub fn insecure_offer(&self) -> Offer {
        Offer { suites: self.banned_suite_codes(), allow_tls13: false, allow_tls12: true }
    }

    pub fn tls13_offer(&self) -> Offer {
        Offer { suites: self.tls13_suite_codes(), allow_tls13: true, allow_tls12: false }
    }
}

pub fn is_sha1_family(signature_algorithm: &str) -> bool {
    squash(signature_algorithm).contains("sha1")
}

pub const MIN_RSA_BITS: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingCategory {
    InsecureCipherAccepted,
    DeprecatedHashCert,
    ShortKeyCert,
    Tls13Supported,
    AnonymousAccess,
    GuidelineViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeploymentRef {
    pub address: Addr128,
    pub protocol: Protocol,
    pub port: u16,
}

/// One graded handshake: what was offered and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeEvidence {
    pub at: SimTime,
    pub offered_suites: Vec<u16>,
    pub offered_versions: Vec<String>,
    pub transport: TransportStatus,
    pub tls: TlsStatus,
    pub bytes: u64,
}

impl HandshakeEvidence {
    pub fn accepted(&self) -> Option<(String, u16)> {
        self.tls.params().map(|p| (p.version.clone(), p.suite))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Handshake(HandshakeEvidence),
    Certificate {
        fingerprint: String,
        signature_algorithm: String,
        public_key_algorithm: String,
        public_key_bits: u32,
    },
    Access {
        at: SimTime,
        verdict: AccessVerdict,
        visible_topics: Option<u32>,
    },
    Guideline {
        profile_version: String,
        violations: Vec<String>,
    },
}

impl Evidence {
    fn certificate(c: &CertSummary) -> Self {
        Evidence::Certificate {
            fingerprint: c.fingerprint.clone(),
            signature_algorithm: c.signature_algorithm.clone(),
            public_key_algorithm: c.public_key_algorithm.clone(),
            public_key_bits: c.public_key_bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityFinding {
    pub subject: DeploymentRef,
    pub category: FindingCategory,
    pub detail: String,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessVerdict {
    AnonymousAllowed,
    AuthRequired,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessAssessment {
    pub subject: DeploymentRef,
    pub at: SimTime,
    pub over_tls: bool,
    pub verdict: AccessVerdict,
    pub detail: String,
    /// Count only; message contents are never kept.
    pub visible_topics: Option<u32>,
}

impl AccessAssessment {
    fn from_probe(subject: DeploymentRef, at: SimTime, over_tls: bool, probe: Option<AccessProbe>) -> Self {
        let (verdict, detail, visible_topics) = match probe {
            Some(AccessProbe::Anonymous { visible_topics }) => {
                (AccessVerdict::AnonymousAllowed, "credential-free login accepted".to_string(), visible_topics)
            }
            Some(AccessProbe::AuthRequired { detail }) => (AccessVerdict::AuthRequired, detail, None),
            Some(AccessProbe::Indeterminate { reason }) => (AccessVerdict::Indeterminate, reason, None),
            None => (AccessVerdict::Indeterminate, "connection lost".to_string(), None),
        };
        AccessAssessment { subject, at, over_tls, verdict, detail, visible_topics }
    }

    pub fn finding(&self) -> Option<SecurityFinding> {
        (self.verdict == AccessVerdict::AnonymousAllowed).then(|| SecurityFinding {
            subject: self.subject,
            category: FindingCategory::AnonymousAccess,
            detail: match self.visible_topics {
                Some(n) => format!("anonymous login accepted, {n} topics visible"),
                None => "anonymous login accepted".to_string(),
            },
            evidence: Evidence::Access { at: self.at, verdict: self.verdict, visible_topics: self.visible_topics },
        })
    }
}

/// Port graded for (D)TLS: the secure port when it validated, else the
/// standard port that answered inside (D)TLS.
pub fn tls_port(d: &DeploymentRecord) -> Option<u16> {
    if !d.tls_adopting {
        return None;
    }
    let secure = d.protocol.secure_port();
    Some(if d.valid_ports.contains(&secure) { secure } else { d.protocol.standard_port() })
}

/// Port and wrapping used for the access check: plaintext when the
/// standard port answered in the clear, (D)TLS otherwise.
pub fn access_channel(d: &DeploymentRecord) -> Option<(u16, bool)> {
    if !matches!(d.protocol, Protocol::Mqtt | Protocol::Amqp) {
        return None;
    }
    let std = d.protocol.standard_port();
    if d.valid_ports.contains(&std) && !d.tls_on_standard_port {
        return Some((std, false));
    }
    tls_port(d).map(|p| (p, true))
}

fn target(d: &DeploymentRecord, port: u16) -> Target {
    let spec = ProtocolSpec::from_port(d.protocol, port).expect("port belongs to protocol");
    Target::new(d.address, spec)
}

/// Findings from the two graded handshakes and the certificate captured
/// during validation.
pub fn grade_tls(
    d: &DeploymentRecord,
    port: u16,
    insecure: &HandshakeEvidence,
    tls13: &HandshakeEvidence,
    profile: &GuidelineProfile,
) -> Vec<SecurityFinding> {
    let subject = DeploymentRef { address: d.address, protocol: d.protocol, port };
    let mut out = Vec::new();
    let mut violations = Vec::new();
    let mut push = |category, detail: String, evidence| out.push(SecurityFinding { subject, category, detail, evidence });

    if let Some((version, suite)) = insecure.accepted() {
        push(
            FindingCategory::InsecureCipherAccepted,
            format!("accepted {} over {version} from an insecure-only offer", suites::label(suite)),
            Evidence::Handshake(insecure.clone()),
        );
        if profile.bans_suite(suite) {
            violations.push(format!("banned suite {}", suites::label(suite)));
        }
    }
    if let Some(c) = &d.certificate {
        if is_sha1_family(&c.signature_algorithm) {
            push(
                FindingCategory::DeprecatedHashCert,
                format!("certificate signed with {}", c.signature_algorithm),
                Evidence::certificate(c),
            );
        }
        if c.is_rsa() && c.public_key_bits < MIN_RSA_BITS {
            push(
                FindingCategory::ShortKeyCert,
                format!("{}-bit RSA key", c.public_key_bits),
                Evidence::certificate(c),
            );
        }
        if profile.bans_hash(&c.signature_algorithm) {
            violations.push(format!("banned signature hash in {}", c.signature_algorithm));
        }
        if profile.bans_key(c) {
            violations.push(format!("RSA key of {} bits below {}", c.public_key_bits, profile.min_rsa_bits));
        }
    }
    if let Some((version, suite)) = tls13.accepted().filter(|(_, s)| suites::is_tls13(*s)) {
        push(
            FindingCategory::Tls13Supported,
            format!("negotiated {version} with {}", suites::label(suite)),
            Evidence::Handshake(tls13.clone()),
        );
    }
    if !violations.is_empty() {
        let detail = format!("violates profile {}: {}", profile.version, violations.join("; "));
        push(
            FindingCategory::GuidelineViolation,
            detail,
            Evidence::Guideline { profile_version: profile.version.clone(), violations },
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Task {
    InsecureOffer,
    Tls13Offer,
    Access { over_tls: bool },
}

struct Request {
    deployment: usize,
    target: Target,
    task: Task,
}

enum TaskResult {
    Handshake(HandshakeEvidence),
    Access(Option<AccessProbe>),
}

fn graded_handshake(prober: &Prober, target: &Target, offer: &Offer, at: SimTime) -> HandshakeEvidence {
    let sr = prober.with_session(target, Some(offer), |_| ());
    let flavor = match target.spec.transport() {
        crate::model::Transport::StreamTcp => tls::Flavor::Stream,
        crate::model::Transport::DatagramUdp => tls::Flavor::Datagram,
    };
    HandshakeEvidence {
        at,
        offered_suites: offer.suites.clone(),
        offered_versions: offer.versions(flavor).into_iter().map(tls::version_name).collect(),
        transport: sr.transport,
        tls: sr.tls,
        bytes: sr.bytes,
    }
}

fn access_probe(prober: &Prober, target: &Target, over_tls: bool) -> Option<AccessProbe> {
    let offer = over_tls.then(|| prober.validation_offer());
    let cfg = prober.config();
    prober
        .with_session(target, offer.as_ref(), |ch| match target.spec.protocol() {
            Protocol::Mqtt => mqtt_visible_topics(ch, target, cfg),
            _ => amqp_anonymous_login(ch, cfg),
        })
        .result
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub findings: Vec<SecurityFinding>,
    pub access: Vec<AccessAssessment>,
}

/// Grades every deployment. Extra handshakes go through the campaign's
/// arbiter, so they obey the per-host gap and the global rate cap.
pub fn assess(campaign: &mut Campaign, deployments: &[DeploymentRecord], profile: &GuidelineProfile) -> Assessment {
    let mut requests = Vec::new();
    for (i, d) in deployments.iter().enumerate() {
        if let Some(port) = tls_port(d) {
            for task in [Task::InsecureOffer, Task::Tls13Offer] {
                requests.push(Request { deployment: i, target: target(d, port), task });
            }
        }
        if let Some((port, over_tls)) = access_channel(d) {
            requests.push(Request { deployment: i, target: target(d, port), task: Task::Access { over_tls } });
        }
    }
    let insecure = profile.insecure_offer();
    let modern = profile.tls13_offer();
    let results = campaign.followups(
        &requests,
        |r| (r.target, Purpose::Assessment),
        |prober, r, t, at| match r.task {
            Task::InsecureOffer => TaskResult::Handshake(graded_handshake(prober, t, &insecure, at)),
            Task::Tls13Offer => TaskResult::Handshake(graded_handshake(prober, t, &modern, at)),
            Task::Access { over_tls } => TaskResult::Access(access_probe(prober, t, over_tls)),
        },
    );

    let mut out = Assessment::default();
    let mut pending: Option<(usize, HandshakeEvidence)> = None;
    for (r, (at, res)) in requests.iter().zip(results) {
        let d = &deployments[r.deployment];
        match (r.task, res) {
            (Task::InsecureOffer, TaskResult::Handshake(h)) => pending = Some((r.deployment, h)),
            (Task::Tls13Offer, TaskResult::Handshake(h)) => {
                let (idx, ins) = pending.take().expect("insecure offer precedes 1.3 offer");
                debug_assert_eq!(idx, r.deployment);
                out.findings.extend(grade_tls(d, r.target.spec.port(), &ins, &h, profile));
            }
            (Task::Access { over_tls }, TaskResult::Access(probe)) => {
                let subject = DeploymentRef { address: d.address, protocol: d.protocol, port: r.target.spec.port() };
                let a = AccessAssessment::from_probe(subject, at, over_tls, probe);
                out.findings.extend(a.finding());
                out.access.push(a);
            }
            _ => unreachable!("task and result kinds match"),
        }
    }
    out
}

/// Single-deployment form of the (D)TLS grading.
pub fn assess_tls(campaign: &mut Campaign, d: &DeploymentRecord, profile: &GuidelineProfile) -> Vec<SecurityFinding> {
    if !d.tls_adopting {
        return Vec::new();
    }
    let mut a = assess(campaign, std::slice::from_ref(d), profile);
    a.findings.retain(|f| f.category != FindingCategory::AnonymousAccess);
    a.findings
}

/// Single-deployment access check; `None` for protocols other than MQTT
/// and AMQP.
pub fn assess_access_control(campaign: &mut Campaign, d: &DeploymentRecord) -> Option<AccessAssessment> {
    let (port, over_tls) = access_channel(d)?;
    let t = target(d, port);
    let mut res = campaign.followups(&[t], |t| (*t, Purpose::Assessment), |prober, _, t, at| {
        (at, access_probe(prober, t, over_tls))
    });
    let (_, (at, probe)) = res.pop()?;
    let subject = DeploymentRef { address: d.address, protocol: d.protocol, port };
    Some(AccessAssessment::from_probe(subject, at, over_tls, probe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prober::TlsParams;
    use crate::validator::HostClass;

    fn cert(sig: &str, alg: &str, bits: u32) -> CertSummary {
        CertSummary::new("dev", vec![], sig, alg, bits, ("2023-01-01T00:00:00Z", "2033-01-01T00:00:00Z"))
    }

    fn record(c: Option<CertSummary>) -> DeploymentRecord {
        DeploymentRecord {
            address: Addr128(7),
            protocol: Protocol::Mqtt,
            tls_adopting: true,
            class: HostClass::ValidTls,
            valid_ports: vec![8883],
            tls_on_standard_port: false,
            certificate: c,
            certificates_differ: false,
            meta: None,
        }
    }

    fn hs(accepted: Option<(u16, u16)>) -> HandshakeEvidence {
        HandshakeEvidence {
            at: SimTime::ZERO,
            offered_suites: vec![],
            offered_versions: vec![],
            transport: TransportStatus::Established,
            tls: match accepted {
                Some((v, s)) => TlsStatus::Completed(TlsParams::new(v, s, None)),
                None => TlsStatus::Failed { reason: "alert 40".into() },
            },
            bytes: 0,
        }
    }

    fn categories(f: &[SecurityFinding]) -> Vec<FindingCategory> {
        let mut c: Vec<_> = f.iter().map(|f| f.category).collect();
        c.sort();
        c
    }

    #[test]
    fn builtin_profile_parses() {
        let p = GuidelineProfile::builtin();
        assert!(p.banned_suite_codes().contains(&0x0005));
        assert_eq!(p.tls13_suite_codes(), vec![0x1301, 0x1302, 0x1303]);
        assert!(p.bans_hash("ecdsa-with-SHA1"));
        assert!(p.bans_hash("sha1WithRSAEncryption"));
        assert!(!p.bans_hash("sha256WithRSAEncryption"));
    }

    #[test]
    fn unknown_suite_rejected() {
        let text = BUILTIN_PROFILE.replace("TLS_RSA_WITH_RC4_128_SHA\"", "TLS_MADE_UP\"");
        assert!(matches!(GuidelineProfile::from_json(&text), Err(ProfileError::UnknownSuite(_))));
    }

    #[test]
    fn weak_cert_findings() {
        let p = GuidelineProfile::builtin();
        let d = record(Some(cert("sha1WithRSAEncryption", "rsa", 1024)));
        let f = grade_tls(&d, 8883, &hs(None), &hs(None), &p);
        assert_eq!(
            categories(&f),
            vec![FindingCategory::DeprecatedHashCert, FindingCategory::ShortKeyCert, FindingCategory::GuidelineViolation]
        );
    }

    #[test]
    fn modern_tls13_has_no_violation() {
        let p = GuidelineProfile::builtin();
        let d = record(Some(cert("sha256WithRSAEncryption", "rsa", 2048)));
        let f = grade_tls(&d, 8883, &hs(None), &hs(Some((tls::TLS13, 0x1301))), &p);
        assert_eq!(categories(&f), vec![FindingCategory::Tls13Supported]);
    }

    #[test]
    fn insecure_suite_finding() {
        let p = GuidelineProfile::builtin();
        let d = record(Some(cert("sha256WithRSAEncryption", "rsa", 2048)));
        let f = grade_tls(&d, 8883, &hs(Some((tls::TLS12, 0x0005))), &hs(None), &p);
        assert_eq!(categories(&f), vec![FindingCategory::InsecureCipherAccepted, FindingCategory::GuidelineViolation]);
    }

    #[test]
    fn profile_drives_violations() {
        let mut strict = GuidelineProfile::builtin();
        strict.min_rsa_bits = 3072;
        let d = record(Some(cert("sha256WithRSAEncryption", "rsa", 2048)));
        let f = grade_tls(&d, 8883, &hs(None), &hs(None), &strict);
        assert_eq!(categories(&f), vec![FindingCategory::GuidelineViolation]);
        assert!(grade_tls(&d, 8883, &hs(None), &hs(None), &GuidelineProfile::builtin()).is_empty());
    }

    #[test]
    fn ec_keys_are_not_short() {
        let p = GuidelineProfile::builtin();
        let d = record(Some(cert("ecdsa-with-SHA256", "ec", 256)));
        assert!(grade_tls(&d, 8883, &hs(None), &hs(None), &p).is_empty());
    }

    #[test]
    fn access_ports() {
        let mut d = record(None);
        assert_eq!(access_channel(&d), Some((8883, true)));
        d.valid_ports = vec![1883, 8883];
        assert_eq!(access_channel(&d), Some((1883, false)));
        d.valid_ports = vec![1883];
        d.tls_on_standard_port = true;
        assert_eq!(access_channel(&d), Some((1883, true)));
        assert_eq!(tls_port(&d), Some(1883));
        d.protocol = Protocol::Coap;
        assert_eq!(access_channel(&d), None);
    }
}
