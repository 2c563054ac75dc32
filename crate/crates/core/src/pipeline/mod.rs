//! End-to-end campaigns: seeds, generators, dedup, probing, validation,
//! alias detection, tracing and assessment, each stage leaving JSONL/CSV
//! artifacts in the output directory.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::addr::Addr128;
use crate::aliaser::{detect_aliases, imported_verdicts, AliasConfig, AliasVerdict, BannerAndCertificate};
use crate::assessor::{assess, GuidelineProfile};
use crate::blockdedup::{CidrSet, DedupFilter, Seen};
use crate::clock::SimTime;
use crate::generators::{
    active_partition_step, density_fillup_generate, entropy_generate, import_external, GeneratorRun, PartitionConfig,
    PartitionTree, Scanlist, Technique,
};
use crate::harness::{build_universe, MockResolver, Universe, UniverseSpec};
use crate::jsonl;
use crate::model::SourceTag;
use crate::prober::net::SocketDispatcher;
use crate::prober::{Campaign, Dispatcher, PlannedProbe, ProbeOutcome, Target};
use crate::seeds::{
    derive_from_v4, load_domain_list, load_hitlist, load_v4_records, resolve_zone_domains, sample_seeds, DomainFailure,
    Resolver, SeedList, SystemResolver,
};
use crate::tracer::{annotate_as, minimal_combination, parse_type_map, AsAnnotation, MetricsReport, RoutingTable};
use crate::validator::{dedupe_deployments, funnel, DeploymentRecord};

pub use config::{CampaignConfig, GeneratorSpec, RoutingInputs, SeedInput};
pub use report::{emit_report, load_ledger, ProtocolSummary, Report};

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const SEEDS: &str = "seeds.txt";
    pub const MANIFEST: &str = "seeds.manifest.jsonl";
    pub const DNS_FAILURES: &str = "dns_failures.jsonl";
    pub const SCANLISTS: &str = "scanlists";
    pub const TARGETS: &str = "targets.txt";
    pub const LEDGER: &str = "ledger.jsonl";
    pub const SOURCES: &str = "sources.jsonl";
    pub const PROBES: &str = "probes.jsonl";
    pub const GRANTS: &str = "grants.jsonl";
    pub const DEPLOYMENTS: &str = "deployments.jsonl";
    pub const FUNNEL: &str = "funnel.csv";
    pub const ALIASES: &str = "aliases.jsonl";
    pub const METRICS: &str = "metrics.csv";
    pub const GAINS: &str = "gains.csv";
    pub const COMBINATION: &str = "combination.json";
    pub const AS_ANNOTATIONS: &str = "as.jsonl";
    pub const FINDINGS: &str = "findings.jsonl";
    pub const ACCESS: &str = "access.jsonl";
    pub const REPORT_DIR: &str = "report";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Seeds,
    Generate,
    Scan,
    Validate,
    Alias,
    Trace,
    Assess,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

/// What a run did: the last stage it completed, non-fatal problems, and
/// the per-protocol summary when the report stage ran.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub completed: Option<Stage>,
    pub failures: Vec<StageFailure>,
    pub probes: usize,
    pub deployments: usize,
    pub report: Option<Report>,
}

impl RunSummary {
    /// 0 when every stage succeeded, 2 after any stage failure.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "probes: {}  deployments: {}", self.probes, self.deployments)?;
        if let Some(r) = &self.report {
            writeln!(f, "{:<6} {:>6} {:>6} {:>8} {:>6}", "proto", "valid", "tls", "aliased", "anon")?;
            for (p, s) in &r.protocols {
                writeln!(f, "{:<6} {:>6} {:>6} {:>8} {:>6}", p.name(), s.valid, s.tls_adopting, s.aliased, s.anonymous)?;
            }
        }
        for e in &self.failures {
            writeln!(f, "failed in {}: {}", e.stage, e.message)?;
        }
        Ok(())
    }
}

enum Network {
    Harness(Box<Universe>, MockResolver),
    Sockets(SocketDispatcher, SystemResolver),
}

impl Network {
    fn dispatcher(&self) -> &dyn Dispatcher {
        match self {
            Network::Harness(u, _) => u.as_ref(),
            Network::Sockets(d, _) => d,
        }
    }

    fn resolver(&self) -> &dyn Resolver {
        match self {
            Network::Harness(_, r) => r,
            Network::Sockets(_, r) => r,
        }
    }
}

/// Inputs loaded once, before any stage runs; failures here are
/// configuration errors.
struct Environment {
    network: Network,
    blocklist: CidrSet,
    alias_annotations: CidrSet,
    profile: GuidelineProfile,
    routing: Option<(RoutingTable, BTreeMap<u32, String>, BTreeSet<u32>)>,
}

fn config_err(what: impl fmt::Display) -> ConfigError {
    ConfigError(what.to_string())
}

impl Environment {
    fn load(cfg: &CampaignConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let network = match &cfg.harness {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                let spec: UniverseSpec =
                    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                let (u, _) = build_universe(&spec).map_err(|e| config_err(format!("harness: {e}")))?;
                let resolver = u.resolver();
                Network::Harness(Box::new(u), resolver)
            }
            None => Network::Sockets(SocketDispatcher::default(), SystemResolver),
        };
        let blocklist = match &cfg.blocklist {
            Some(p) => CidrSet::load(p).map_err(|e| config_err(format!("blocklist: {e}")))?,
            None => CidrSet::new(),
        };
        let mut alias_annotations = CidrSet::new();
        for s in &cfg.seeds {
            if let SeedInput::Hitlist { aliases: Some(p), .. } = s {
                for prefix in CidrSet::load(p).map_err(|e| config_err(format!("aliases: {e}")))?.prefixes() {
                    alias_annotations.insert(prefix);
                }
            }
        }
        let profile = match &cfg.guideline_profile {
            Some(p) => GuidelineProfile::load(p).map_err(|e| config_err(format!("guideline profile: {e}")))?,
            None => GuidelineProfile::builtin(),
        };
        let routing = match &cfg.routing {
            Some(r) => {
                let table = RoutingTable::load(&r.snapshot).map_err(config_err)?;
                let types = match &r.types {
                    Some(p) => {
                        let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                        parse_type_map(&text).map_err(config_err)?
                    }
                    None => BTreeMap::new(),
                };
                let v4 = match &r.v4_asns {
                    Some(p) => parse_asn_list(p)?,
                    None => BTreeSet::new(),
                };
                Some((table, types, v4))
            }
            None => None,
        };
        fs::create_dir_all(&cfg.output_dir)
            .map_err(|e| config_err(format!("output directory {}: {e}", cfg.output_dir.display())))?;
        Ok(Environment { network, blocklist, alias_annotations, profile, routing })
    }
}

fn parse_asn_list(path: &Path) -> Result<BTreeSet<u32>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.trim_start_matches("AS")
                .parse()
                .map_err(|_| config_err(format!("{}: bad AS number {l:?}", path.display())))
        })
        .collect()
}

#[derive(Serialize)]
struct AsLine<'a> {
    address: Addr128,
    protocol: crate::model::Protocol,
    #[serde(flatten)]
    annotation: &'a AsAnnotation,
}

/// Mutable state threaded through the stages of one run.
type Step<'e> = fn(&mut Run<'e>) -> StageResult;

struct Run<'e> {
    cfg: &'e CampaignConfig,
    env: &'e Environment,
    campaign: Campaign<'e>,
    seeds: SeedList,
    scanlists: Vec<Scanlist>,
    ledger: crate::tracer::OriginLedger,
    outcomes: Vec<ProbeOutcome>,
    deployments: Vec<DeploymentRecord>,
    verdicts: Vec<AliasVerdict>,
    summary: RunSummary,
}

type StageResult = Result<(), String>;

fn io_err(e: impl fmt::Display) -> String {
    e.to_string()
}

impl<'e> Run<'e> {
    fn new(cfg: &'e CampaignConfig, env: &'e Environment) -> Self {
        Run {
            cfg,
            env,
            campaign: Campaign::new(env.network.dispatcher(), cfg.prober.clone(), cfg.politeness.clone(), SimTime::ZERO),
            seeds: SeedList::new(),
            scanlists: Vec::new(),
            ledger: Default::default(),
            outcomes: Vec::new(),
            deployments: Vec::new(),
            verdicts: Vec::new(),
            summary: RunSummary::default(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn fail(&mut self, stage: Stage, message: impl Into<String>) {
        let message = message.into();
        warn!("{stage}: {message}");
        self.summary.failures.push(StageFailure { stage, message });
    }

    fn seeds(&mut self) -> StageResult {
        let resolver = self.env.network.resolver();
        let mut dns_failures: Vec<DomainFailure> = Vec::new();
        for input in &self.cfg.seeds {
            let loaded = match input {
                SeedInput::Hitlist { source, path, aliases } => {
                    load_hitlist(path, aliases.as_deref(), *source).map_err(|e| e.to_string())
                }
                SeedInput::Domains { path, include_www } => load_domain_list(path)
                    .and_then(|d| resolve_zone_domains(&d, resolver, *include_www))
                    .map(|r| {
                        dns_failures.extend(r.failures);
                        r.seeds
                    })
                    .map_err(|e| e.to_string()),
                SeedInput::V4Records { path } => load_v4_records(path)
                    .and_then(|r| derive_from_v4(&r, resolver))
                    .map(|r| {
                        dns_failures.extend(r.failures);
                        r.seeds
                    })
                    .map_err(|e| e.to_string()),
            };
            match loaded {
                Ok(list) => self.seeds.merge(list),
                Err(e) => self.fail(Stage::Seeds, e),
            }
        }
        if let Some(n) = self.cfg.seed_sample {
            let manifest = std::mem::take(&mut self.seeds.manifest);
            self.seeds = sample_seeds(&self.seeds, n, self.cfg.rng_seed);
            self.seeds.manifest = manifest;
        }
        self.seeds.write(&self.path(artifacts::SEEDS)).map_err(io_err)?;
        jsonl::write(&self.path(artifacts::MANIFEST), &self.seeds.manifest).map_err(io_err)?;
        jsonl::write(&self.path(artifacts::DNS_FAILURES), &dns_failures).map_err(io_err)?;
        for e in self.seeds.entries() {
            self.ledger.record_entry(e);
        }
        info!("seeds: {} addresses", self.seeds.len());
        Ok(())
    }

    fn source_seeds(&self, g: &GeneratorSpec) -> Vec<Addr128> {
        self.seeds.from_source(g.seed_source).addresses()
    }

    fn generate(&mut self) -> StageResult {
        let dir = self.path(artifacts::SCANLISTS);
        fs::create_dir_all(&dir).map_err(io_err)?;
        for g in &self.cfg.generators {
            let rng_seed = self.cfg.generator_seed(g);
            let run = GeneratorRun::new(&g.name, g.technique, g.seed_source, g.budget, rng_seed);
            self.ledger.register(run.tag());
            let seeds = self.source_seeds(g);
            let generated = match g.technique {
                Technique::ActivePartition => continue,
                Technique::DensityFillUp => Ok(density_fillup_generate(&seeds, g.budget as usize, g.min_density, rng_seed)),
                Technique::EntropyModel => entropy_generate(&seeds, g.budget as usize, rng_seed),
                Technique::ExternalImport => {
                    import_external(g.path.as_deref().expect("validated"), &g.name, g.seed_source).map(|s| s.addresses)
                }
            };
            let addresses = match generated {
                Ok(a) => a,
                Err(e) => {
                    self.fail(Stage::Generate, format!("{}: {e}", run.tag()));
                    continue;
                }
            };
            let mut list = Scanlist::new(run, addresses);
            list.exclude(&seeds.into_iter().collect());
            list.write(&dir).map_err(io_err)?;
            self.ledger.record_all(&list.run.tag(), list.addresses.iter().copied());
            info!("{}: {} addresses", list.run.tag(), list.len());
            self.scanlists.push(list);
        }
        Ok(())
    }

    /// Blocklisted and already-seen addresses are dropped; the rest become
    /// one target per configured protocol port.
    fn admit(&self, filter: &mut DedupFilter, candidates: impl IntoIterator<Item = Addr128>) -> Vec<Target> {
        let mut targets = Vec::new();
        for a in candidates {
            if self.env.blocklist.contains(a) {
                continue;
            }
            if let Ok(Seen::Fresh) = filter.check_and_insert(a) {
                targets.extend(self.cfg.protocols.iter().map(|spec| Target::new(a, *spec)));
            }
        }
        targets
    }

    fn new_filter(&self) -> Result<DedupFilter, String> {
        let active: u64 = self
            .cfg
            .generators
            .iter()
            .filter(|g| g.technique == Technique::ActivePartition)
            .map(|g| g.budget)
            .sum();
        let capacity = (self.ledger.len() as u64 + active).max(1024);
        DedupFilter::new(capacity, self.cfg.dedup_fp_rate).map_err(io_err)
    }

    fn initial_targets(&self) -> Result<Vec<Target>, String> {
        let mut filter = self.new_filter()?;
        let candidates: Vec<Addr128> = self.ledger.addresses().map(|(a, _)| *a).collect();
        Ok(self.admit(&mut filter, candidates))
    }

    fn scan(&mut self) -> StageResult {
        let mut filter = self.new_filter()?;
        let candidates: Vec<Addr128> = self.ledger.addresses().map(|(a, _)| *a).collect();
        let targets = self.admit(&mut filter, candidates);
        let mut probed: Vec<Addr128> = targets.iter().map(|t| t.address).collect();
        self.outcomes = self.campaign.probe_batch(&targets, self.cfg.rng_seed);
        let mut valid: BTreeSet<Addr128> =
            self.outcomes.iter().filter(|o| o.app.is_valid()).map(|o| o.target.address).collect();

        let dir = self.path(artifacts::SCANLISTS);
        for g in self.cfg.generators.iter().filter(|g| g.technique == Technique::ActivePartition) {
            let rng_seed = self.cfg.generator_seed(g);
            let run = GeneratorRun::new(&g.name, g.technique, g.seed_source, g.budget, rng_seed);
            let tag = run.tag();
            let seeds: BTreeSet<Addr128> = self.source_seeds(g).into_iter().collect();
            let mut tree = PartitionTree::build(&seeds.iter().copied().collect::<Vec<_>>(), PartitionConfig::default(), rng_seed);
            let mut feedback = BTreeMap::new();
            let mut emitted_all = Vec::new();
            let mut remaining = g.budget;
            for round in 0..g.rounds {
                let step = remaining / u64::from(g.rounds - round);
                remaining -= step;
                let mut emitted = active_partition_step(&mut tree, &feedback, step);
                emitted.retain(|a| !seeds.contains(a));
                self.ledger.record_all(&tag, emitted.iter().copied());
                let targets = self.admit(&mut filter, emitted.iter().copied());
                probed.extend(targets.iter().map(|t| t.address));
                let outs = self.campaign.probe_batch(&targets, self.cfg.rng_seed ^ u64::from(round + 1));
                valid.extend(outs.iter().filter(|o| o.app.is_valid()).map(|o| o.target.address));
                self.outcomes.extend(outs);
                feedback = tree.feedback_from_results(emitted.iter().map(|a| (*a, valid.contains(a))));
                emitted_all.extend(emitted);
            }
            let list = Scanlist::new(run, emitted_all);
            list.write(&dir).map_err(io_err)?;
            info!("{}: {} addresses over {} rounds", tag, list.len(), g.rounds);
            self.scanlists.push(list);
        }
        probed.dedup();

        let mut out = BufWriter::new(fs::File::create(self.path(artifacts::TARGETS)).map_err(io_err)?);
        for a in &probed {
            writeln!(out, "{a}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
        self.write_ledger()?;
        jsonl::write(&self.path(artifacts::PROBES), &self.outcomes).map_err(io_err)?;
        self.write_grants()?;
        self.summary.probes = self.outcomes.len();
        Ok(())
    }

    fn write_ledger(&self) -> StageResult {
        let entries = self.ledger.addresses().map(|(a, origins)| crate::model::ProvenancedAddress {
            address: *a,
            origins: origins.clone(),
            aliased: self.seeds.get(*a).is_some_and(|e| e.aliased),
        });
        jsonl::write(&self.path(artifacts::LEDGER), entries).map_err(io_err)?;
        jsonl::write(&self.path(artifacts::SOURCES), self.ledger.sources()).map_err(io_err)
    }

    fn write_grants(&self) -> StageResult {
        jsonl::write(&self.path(artifacts::GRANTS), self.campaign.arbiter().grants()).map_err(io_err)
    }

    fn validate(&mut self) -> StageResult {
        self.deployments = dedupe_deployments(&self.outcomes);
        jsonl::write(&self.path(artifacts::DEPLOYMENTS), &self.deployments).map_err(io_err)?;
        let mut out = BufWriter::new(fs::File::create(self.path(artifacts::FUNNEL)).map_err(io_err)?);
        writeln!(out, "protocol,port,hosts,transport,tls,valid_tls,valid_plain").map_err(io_err)?;
        for ((p, port), r) in funnel(&self.outcomes) {
            if !r.is_monotone() {
                warn!("funnel for {p}/{port} is not monotone: {r:?}");
            }
            writeln!(out, "{},{},{},{},{},{},{}", p.name(), port, r.hosts, r.transport, r.tls, r.valid_tls, r.valid_plain)
                .map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
        self.summary.deployments = self.deployments.len();
        Ok(())
    }

    fn alias(&mut self) -> StageResult {
        let cfg = AliasConfig { rng_seed: self.cfg.rng_seed, ..self.cfg.alias };
        let detected = detect_aliases(&mut self.campaign, &self.deployments, &cfg, &BannerAndCertificate).map_err(io_err)?;
        let imported = imported_verdicts(
            self.deployments.iter().map(|d| d.address).collect::<BTreeSet<_>>(),
            &self.env.alias_annotations,
        );
        self.verdicts = detected.into_iter().chain(imported).collect();
        for v in self.verdicts.iter().filter(|v| v.aliased) {
            self.ledger.mark_aliased(v.address);
        }
        jsonl::write(&self.path(artifacts::ALIASES), &self.verdicts).map_err(io_err)?;
        self.write_grants()
    }

    fn trace(&mut self) -> StageResult {
        let valid: BTreeSet<Addr128> = self.deployments.iter().map(|d| d.address).collect();
        let runs: Vec<SourceTag> = self.ledger.sources().cloned().collect();
        let metrics = MetricsReport::compute(&self.ledger, &runs, &valid);
        let mut out = BufWriter::new(fs::File::create(self.path(artifacts::METRICS)).map_err(io_err)?);
        metrics.write_csv(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)?;
        let mut out = BufWriter::new(fs::File::create(self.path(artifacts::GAINS)).map_err(io_err)?);
        writeln!(out, "from,over,gain").map_err(io_err)?;
        for g in &metrics.gains {
            writeln!(out, "{},{},{}", g.from, g.over, g.gain).map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;

        let clean: BTreeSet<Addr128> = valid.iter().filter(|a| !self.ledger.is_aliased(**a)).copied().collect();
        let combination = match minimal_combination(&self.ledger, &runs, &clean, self.cfg.coverage_target) {
            Ok(Ok(c)) => c,
            Ok(Err(unreachable)) => unreachable.best,
            Err(e) => return Err(e.to_string()),
        };
        let text = serde_json::to_string_pretty(&combination).map_err(io_err)?;
        fs::write(self.path(artifacts::COMBINATION), text + "\n").map_err(io_err)?;

        if let Some((table, types, v4)) = &self.env.routing {
            let annotations: Vec<AsAnnotation> =
                self.deployments.iter().map(|d| annotate_as(d.address, table, types, v4)).collect();
            let lines = self.deployments.iter().zip(&annotations).map(|(d, a)| AsLine {
                address: d.address,
                protocol: d.protocol,
                annotation: a,
            });
            jsonl::write(&self.path(artifacts::AS_ANNOTATIONS), lines).map_err(io_err)?;
        }
        Ok(())
    }

    fn assess(&mut self) -> StageResult {
        let a = assess(&mut self.campaign, &self.deployments, &self.env.profile);
        jsonl::write(&self.path(artifacts::FINDINGS), &a.findings).map_err(io_err)?;
        jsonl::write(&self.path(artifacts::ACCESS), &a.access).map_err(io_err)?;
        self.write_grants()
    }

    fn report(&mut self) -> StageResult {
        self.summary.report = Some(emit_report(&self.cfg.output_dir).map_err(io_err)?);
        Ok(())
    }

    fn execute(mut self, until: Stage) -> RunSummary {
        let stages: [(Stage, Step<'e>); 8] = [
            (Stage::Seeds, Self::seeds),
            (Stage::Generate, Self::generate),
            (Stage::Scan, Self::scan),
            (Stage::Validate, Self::validate),
            (Stage::Alias, Self::alias),
            (Stage::Trace, Self::trace),
            (Stage::Assess, Self::assess),
            (Stage::Report, Self::report),
        ];
        for (stage, run) in stages {
            if stage > until {
                break;
            }
            if let Err(e) = run(&mut self) {
                // artifacts of completed stages stay on disk
                self.fail(stage, e);
                return self.summary;
            }
            self.summary.completed = Some(stage);
        }
        self.summary
    }
}

/// Runs every stage up to and including `until`.
pub fn run_pipeline(cfg: &CampaignConfig, until: Stage) -> Result<RunSummary, ConfigError> {
    let env = Environment::load(cfg)?;
    Ok(Run::new(cfg, &env).execute(until))
}

/// The probe plan for seeds and passive scanlists, without dispatching.
/// Active generators are left out: their targets depend on answers.
pub fn plan_probes(cfg: &CampaignConfig) -> Result<(Vec<PlannedProbe>, RunSummary), ConfigError> {
    let env = Environment::load(cfg)?;
    let mut run = Run::new(cfg, &env);
    let prepared = run.seeds().map_err(|e| (Stage::Seeds, e)).and_then(|_| run.generate().map_err(|e| (Stage::Generate, e)));
    if let Err((stage, e)) = prepared {
        run.fail(stage, e);
        return Ok((Vec::new(), run.summary));
    }
    let targets = match run.initial_targets() {
        Ok(t) => t,
        Err(e) => {
            run.fail(Stage::Scan, e);
            return Ok((Vec::new(), run.summary));
        }
    };
    let plan = run.campaign.dry_run(&targets, cfg.rng_seed);
    Ok((plan, run.summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{AddressSpec, Behavior, DeploymentSpec};
    use crate::model::{Protocol, SeedSource};

    fn setup(dir: &Path, blocklist: Option<&str>) -> CampaignConfig {
        let mut spec = UniverseSpec::new(11);
        let plants = [
            ("2001:db8:1::1", Protocol::Mqtt, vec![Behavior::ValidPlain, Behavior::ValidTls, Behavior::AnonymousOpen]),
            ("2001:db8:1::2", Protocol::Amqp, vec![Behavior::ValidTls, Behavior::AuthRequired]),
            ("2001:db8:1::3", Protocol::OpcUa, vec![Behavior::ValidPlain]),
        ];
        for (a, p, b) in plants {
            spec.deployments.push(DeploymentSpec { address: AddressSpec::Fixed(a.parse().unwrap()), protocol: p, behaviors: b });
        }
        fs::write(dir.join("universe.json"), serde_json::to_string(&spec).unwrap()).unwrap();
        fs::write(dir.join("hitlist.txt"), "2001:db8:1::1\n2001:db8:1::2\n2001:db8:1::3\n2001:db8:1::9\n").unwrap();
        let mut cfg = serde_json::json!({
            "seeds": [{"kind": "hitlist", "source": "TUM", "path": "hitlist.txt"}],
            "generators": [{"name": "fill", "technique": "DensityFillUp", "seed_source": "TUM", "budget": 20, "min_density": 0.2}],
            "harness": "universe.json",
            "output_dir": "out",
            "rng_seed": 3,
        });
        if let Some(b) = blocklist {
            cfg["blocklist"] = b.into();
        }
        CampaignConfig::from_json(&cfg.to_string(), dir).unwrap()
    }

    #[test]
    fn small_campaign_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), None);
        let s = run_pipeline(&cfg, Stage::Report).unwrap();
        assert_eq!(s.exit_code(), 0, "{s}");
        assert_eq!(s.deployments, 3);
        let r = s.report.unwrap();
        assert_eq!(r.protocols[&Protocol::Mqtt].anonymous, 1);
        assert_eq!(r.protocols[&Protocol::Amqp].auth_required, 1);
        assert_eq!(r.protocols[&Protocol::Coap].valid, 0);
        let ledger = load_ledger(&cfg.output_dir).unwrap();
        let fill = SourceTag::generator("fill", SeedSource::TumHitlist);
        assert!(ledger.emitted(&fill).is_some_and(|e| !e.is_empty()));
        for name in [artifacts::PROBES, artifacts::DEPLOYMENTS, artifacts::ALIASES, artifacts::FINDINGS, artifacts::METRICS] {
            assert!(cfg.output_dir.join(name).is_file(), "{name}");
        }
    }

    #[test]
    fn missing_blocklist_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), Some("nope.txt"));
        let err = run_pipeline(&cfg, Stage::Report).unwrap_err();
        assert!(err.0.contains("nope.txt"), "{err}");
    }

    #[test]
    fn blocklisted_seeds_are_not_probed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("block.txt"), "2001:db8:1::3/128\n").unwrap();
        let cfg = setup(dir.path(), Some("block.txt"));
        let s = run_pipeline(&cfg, Stage::Validate).unwrap();
        assert_eq!(s.deployments, 2);
        let probes: Vec<ProbeOutcome> = jsonl::read(&cfg.output_dir.join(artifacts::PROBES)).unwrap();
        assert!(probes.iter().all(|o| o.target.address != "2001:db8:1::3".parse().unwrap()));
    }

    #[test]
    fn generator_failure_is_partial() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path(), None);
        cfg.generators.push(GeneratorSpec {
            name: "entropy".into(),
            technique: Technique::EntropyModel,
            seed_source: SeedSource::TumHitlist,
            budget: 10,
            rng_seed: None,
            min_density: 0.1,
            path: None,
            rounds: 1,
        });
        let s = run_pipeline(&cfg, Stage::Report).unwrap();
        assert_eq!(s.exit_code(), 2);
        assert_eq!(s.completed, Some(Stage::Report));
        assert_eq!(s.deployments, 3);
    }

    #[test]
    fn dry_run_dispatches_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), None);
        let (plan, _) = plan_probes(&cfg).unwrap();
        assert!(plan.len() >= 4 * 8);
        assert!(!cfg.output_dir.join(artifacts::PROBES).exists());
    }
}
