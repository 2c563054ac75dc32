//! Summary tables and plot data, computed from the artifact files alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::addr::Addr128;
use crate::aliaser::AliasVerdict;
use crate::assessor::{AccessAssessment, AccessVerdict, FindingCategory, SecurityFinding};
use crate::jsonl;
use crate::model::{Protocol, ProvenancedAddress, SourceTag};
use crate::tracer::{MetricsReport, OriginLedger};
use crate::validator::DeploymentRecord;

use super::artifacts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProtocolSummary {
    pub valid: u64,
    pub tls_adopting: u64,
    pub tls_on_standard_port: u64,
    pub aliased: u64,
    pub anonymous: u64,
    pub auth_required: u64,
    pub indeterminate: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Report {
    pub protocols: BTreeMap<Protocol, ProtocolSummary>,
}

fn read_or_empty<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    if path.exists() {
        jsonl::read(path)
    } else {
        Ok(Vec::new())
    }
}

/// The ledger as written by the scan stage, with detected aliases folded in.
pub fn load_ledger(dir: &Path) -> io::Result<OriginLedger> {
    let mut ledger = OriginLedger::new();
    for e in read_or_empty::<ProvenancedAddress>(&dir.join(artifacts::LEDGER))? {
        ledger.record_entry(&e);
    }
    for tag in read_or_empty::<SourceTag>(&dir.join(artifacts::SOURCES))? {
        ledger.register(tag);
    }
    for v in read_or_empty::<AliasVerdict>(&dir.join(artifacts::ALIASES))? {
        if v.aliased {
            ledger.mark_aliased(v.address);
        }
    }
    Ok(ledger)
}

fn ip_version(a: Addr128) -> &'static str {
    if a.to_ipv6().to_ipv4_mapped().is_some() {
        "4"
    } else {
        "6"
    }
}

fn fraction(n: u64, d: u64) -> String {
    if d == 0 {
        "0.000000".to_string()
    } else {
        format!("{:.6}", n as f64 / d as f64)
    }
}

/// Writes `report/summary.csv`, `fig1_counts.csv`, `fig2_generators.csv`
/// and `fig3_security.csv` under `dir`. Missing artifacts read as empty.
pub fn emit_report(dir: &Path) -> io::Result<Report> {
    let deployments: Vec<DeploymentRecord> = read_or_empty(&dir.join(artifacts::DEPLOYMENTS))?;
    let findings: Vec<SecurityFinding> = read_or_empty(&dir.join(artifacts::FINDINGS))?;
    let access: Vec<AccessAssessment> = read_or_empty(&dir.join(artifacts::ACCESS))?;
    let ledger = load_ledger(dir)?;
    let out = dir.join(artifacts::REPORT_DIR);
    fs::create_dir_all(&out)?;

    let mut report = Report::default();
    for p in Protocol::ALL {
        report.protocols.insert(p, ProtocolSummary::default());
    }
    for d in &deployments {
        let s = report.protocols.entry(d.protocol).or_default();
        s.valid += 1;
        s.tls_adopting += d.tls_adopting as u64;
        s.tls_on_standard_port += d.tls_on_standard_port as u64;
        s.aliased += ledger.is_aliased(d.address) as u64;
    }
    for a in &access {
        let s = report.protocols.entry(a.subject.protocol).or_default();
        match a.verdict {
            AccessVerdict::AnonymousAllowed => s.anonymous += 1,
            AccessVerdict::AuthRequired => s.auth_required += 1,
            AccessVerdict::Indeterminate => s.indeterminate += 1,
        }
    }
    let mut w = BufWriter::new(fs::File::create(out.join("summary.csv"))?);
    writeln!(w, "protocol,valid,tls_adopting,tls_on_standard_port,aliased,anonymous,auth_required,indeterminate")?;
    for (p, s) in &report.protocols {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.name(),
            s.valid,
            s.tls_adopting,
            s.tls_on_standard_port,
            s.aliased,
            s.anonymous,
            s.auth_required,
            s.indeterminate
        )?;
    }
    w.flush()?;

    // a deployment counts as one address, whatever protocols it speaks
    let valid: BTreeSet<Addr128> = deployments.iter().map(|d| d.address).collect();
    let clean: BTreeSet<Addr128> = valid.iter().filter(|a| !ledger.is_aliased(**a)).copied().collect();
    let sources: Vec<SourceTag> = ledger.sources().cloned().collect();
    let mut w = BufWriter::new(fs::File::create(out.join("fig1_counts.csv"))?);
    writeln!(w, "origin,seed_source,found,aliased")?;
    for tag in &sources {
        let emitted = ledger.emitted(tag).expect("listed source");
        let found = emitted.intersection(&clean).count();
        let aliased = emitted.iter().filter(|a| valid.contains(a) && ledger.is_aliased(**a)).count();
        writeln!(w, "{},{},{},{}", tag, tag.seed_source(), found, aliased)?;
    }
    w.flush()?;

    let generator_runs: Vec<SourceTag> = sources.iter().filter(|t| t.is_generator()).cloned().collect();
    let mut w = BufWriter::new(fs::File::create(out.join("fig2_generators.csv"))?);
    MetricsReport::compute(&ledger, &generator_runs, &valid).write_csv(&mut w)?;
    w.flush()?;

    // (TLS-adopting, access-checked) addresses per protocol and IP version
    let mut groups: BTreeMap<(Protocol, &str), [BTreeSet<Addr128>; 2]> = BTreeMap::new();
    for p in Protocol::ALL {
        groups.insert((p, "6"), Default::default());
    }
    for d in &deployments {
        let g = groups.entry((d.protocol, ip_version(d.address))).or_default();
        if d.tls_adopting {
            g[0].insert(d.address);
        }
    }
    for a in &access {
        groups.entry((a.subject.protocol, ip_version(a.subject.address))).or_default()[1].insert(a.subject.address);
    }
    let mut hits: BTreeMap<(Protocol, &str, FindingCategory), BTreeSet<Addr128>> = BTreeMap::new();
    for f in &findings {
        hits.entry((f.subject.protocol, ip_version(f.subject.address), f.category))
            .or_default()
            .insert(f.subject.address);
    }
    let categories = [
        FindingCategory::InsecureCipherAccepted,
        FindingCategory::DeprecatedHashCert,
        FindingCategory::ShortKeyCert,
        FindingCategory::Tls13Supported,
        FindingCategory::GuidelineViolation,
        FindingCategory::AnonymousAccess,
    ];
    let mut w = BufWriter::new(fs::File::create(out.join("fig3_security.csv"))?);
    writeln!(w, "protocol,ip_version,category,count,base,fraction")?;
    for ((p, v), [tls, checked]) in &groups {
        for c in categories {
            let base = if c == FindingCategory::AnonymousAccess { checked.len() } else { tls.len() } as u64;
            let n = hits.get(&(*p, *v, c)).map_or(0, |s| s.len()) as u64;
            writeln!(w, "{},{},{:?},{},{},{}", p.name(), v, c, n, base, fraction(n, base))?;
        }
    }
    w.flush()?;
    Ok(report)
}
