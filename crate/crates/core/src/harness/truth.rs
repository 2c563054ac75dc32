use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::addr::{Addr128, Prefix};
use crate::assessor::{AccessVerdict, FindingCategory};
use crate::jsonl;
use crate::model::Protocol;
use crate::validator::HostClass;

use super::responder::{App, Plant, Service};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortTruth {
    pub port: u16,
    pub class: Option<HostClass>,
}

/// Expected observations for one planted deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub address: Addr128,
    pub protocol: Protocol,
    pub behaviors: Vec<super::Behavior>,
    pub ports: Vec<PortTruth>,
    pub class: HostClass,
    pub valid: bool,
    pub tls_adopting: bool,
    pub tls_on_standard_port: bool,
    pub findings: BTreeSet<FindingCategory>,
    pub access: Option<AccessVerdict>,
    pub visible_topics: Option<u32>,
    pub alias_prefix: Option<Prefix>,
    pub certificate_fingerprint: Option<String>,
}

impl TruthRecord {
    pub fn aliased(&self) -> bool {
        self.alias_prefix.is_some()
    }
}

fn port_class(service: Service) -> Option<HostClass> {
    match service {
        Service::Closed => None,
        Service::Faulty => Some(HostClass::FilteredTransport),
        Service::Plain(App::Iot) => Some(HostClass::ValidPlain),
        Service::Plain(App::Web) => Some(HostClass::TransportOnly),
        Service::Tls(App::Iot) => Some(HostClass::ValidTls),
        Service::Tls(App::Web) => Some(HostClass::TlsNoApp),
    }
}

pub(crate) fn expected(plant: &Plant) -> TruthRecord {
    let p = plant.protocol;
    let f = &plant.flags;
    let ports: Vec<PortTruth> = [p.standard_port(), p.secure_port()]
        .into_iter()
        .map(|port| PortTruth { port, class: port_class(plant.service(p, port)) })
        .collect();
    let class = ports.iter().filter_map(|t| t.class).max().expect("validated plants serve at least one port");
    let valid = class.is_valid();
    let tls_adopting = valid && ports.iter().any(|t| t.class == Some(HostClass::ValidTls));
    let tls_on_standard_port = valid && ports[0].class == Some(HostClass::ValidTls);
    let mut findings = BTreeSet::new();
    if tls_adopting {
        for (on, cat) in [
            (f.insecure_suite, FindingCategory::InsecureCipherAccepted),
            (f.sha1, FindingCategory::DeprecatedHashCert),
            (f.short_key, FindingCategory::ShortKeyCert),
            (f.tls13, FindingCategory::Tls13Supported),
            (f.weak(), FindingCategory::GuidelineViolation),
        ] {
            if on {
                findings.insert(cat);
            }
        }
    }
    let access_checked = valid && matches!(p, Protocol::Mqtt | Protocol::Amqp);
    let access = access_checked.then(|| {
        if f.anonymous {
            findings.insert(FindingCategory::AnonymousAccess);
            AccessVerdict::AnonymousAllowed
        } else {
            AccessVerdict::AuthRequired
        }
    });
    TruthRecord {
        address: plant.address,
        protocol: p,
        behaviors: plant.behaviors.clone(),
        ports,
        class,
        valid,
        tls_adopting,
        tls_on_standard_port,
        findings,
        access,
        visible_topics: (access == Some(AccessVerdict::AnonymousAllowed) && p == Protocol::Mqtt)
            .then_some(plant.topics.len() as u32),
        alias_prefix: f.alias,
        certificate_fingerprint: plant.certificate.as_ref().filter(|_| f.speaks_tls()).map(|c| c.fingerprint.clone()),
    }
}

/// Expected labels for every planted deployment, in planting order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    records: Vec<TruthRecord>,
    index: BTreeMap<(Addr128, Protocol), usize>,
}

impl GroundTruth {
    pub fn new(records: Vec<TruthRecord>) -> Self {
        let index = records.iter().enumerate().map(|(i, r)| ((r.address, r.protocol), i)).collect();
        GroundTruth { records, index }
    }

    pub fn records(&self) -> &[TruthRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, address: Addr128, protocol: Protocol) -> Option<&TruthRecord> {
        self.index.get(&(address, protocol)).map(|&i| &self.records[i])
    }

    pub fn valid_count(&self, protocol: Protocol) -> usize {
        self.records.iter().filter(|r| r.protocol == protocol && r.valid).count()
    }

    pub fn write_jsonl(&self, path: &Path) -> io::Result<()> {
        jsonl::write(path, &self.records)
    }

    pub fn read_jsonl(path: &Path) -> io::Result<Self> {
        Ok(GroundTruth::new(jsonl::read(path)?))
    }
}
