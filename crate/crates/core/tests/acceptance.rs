//! The twelve acceptance criteria, one PASS/FAIL line each. Exits non-zero
//! if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v6iot::addr::{Addr128, Prefix};
use v6iot::aliaser::{detect_aliases, AliasConfig, BannerAndCertificate};
use v6iot::assessor::{assess, AccessVerdict, FindingCategory, GuidelineProfile};
use v6iot::blockdedup::DedupFilter;
use v6iot::clock::SimTime;
use v6iot::generators::{
    density_fillup_generate, LeafId, PartitionConfig, PartitionTree, RegionFeedback, DEFAULT_MIN_DENSITY,
};
use v6iot::harness::{build_universe, Behavior, ClusterSpec, GroundTruth, PlantTemplate, Universe, UniverseSpec};
use v6iot::model::{Protocol, ProtocolSpec, SeedSource, SourceTag};
use v6iot::pipeline::{run_pipeline, CampaignConfig, Stage};
use v6iot::prober::politeness::{audit_host_gaps, audit_peak_rate, min_host_gap};
use v6iot::prober::{Campaign, PolitenessPolicy, ProbeOutcome, ProberConfig, Target};
use v6iot::tracer::{greedy_max_coverage, MetricsReport, OriginLedger};
use v6iot::validator::{classify_all, dedupe_deployments, funnel, DeploymentRecord};

const GAP: Duration = Duration::from_secs(15 * 60);
const RATE_CAP: u64 = 100_000;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Scan<'u> {
    truth: &'u GroundTruth,
    campaign: Campaign<'u>,
    targets: usize,
    outcomes: Vec<ProbeOutcome>,
    elapsed: Duration,
    deployments: Vec<DeploymentRecord>,
}

fn scan<'u>(universe: &'u Universe, truth: &'u GroundTruth) -> Scan<'u> {
    let mut addresses = common::planted(truth);
    addresses.extend(common::unplanted(250));
    let targets: Vec<Target> = addresses
        .iter()
        .flat_map(|&a| ProtocolSpec::all().into_iter().map(move |s| Target::new(a, s)))
        .collect();
    let mut campaign = Campaign::new(universe, ProberConfig::default(), PolitenessPolicy::default(), SimTime::ZERO);
    let start = Instant::now();
    let outcomes = campaign.probe_batch(&targets, 42);
    let deployments = dedupe_deployments(&outcomes);
    Scan { truth, campaign, targets: targets.len(), outcomes, elapsed: start.elapsed(), deployments }
}

fn c1_validation(s: &Scan) -> Verdict {
    let start = Instant::now();
    let classes = classify_all(&s.outcomes);
    let mut host_mismatch = 0;
    let mut port_mismatch = 0;
    for h in &classes {
        let expected = s.truth.get(h.address, h.protocol);
        if h.class != expected.map(|r| r.class) {
            host_mismatch += 1;
        }
        let ports: Vec<_> = h.ports.iter().map(|p| (p.port, p.class)).collect();
        let mut want: Vec<_> = match expected {
            Some(r) => r.ports.iter().map(|p| (p.port, p.class)).collect(),
            None => ports.iter().map(|(p, _)| (*p, None)).collect(),
        };
        want.sort_by_key(|p| p.0);
        if ports != want {
            port_mismatch += 1;
        }
    }
    let missing = s.truth.records().iter().filter(|r| !classes.iter().any(|h| h.address == r.address && h.protocol == r.protocol)).count();
    let rows = funnel(&s.outcomes);
    let non_monotone = rows.values().filter(|r| !r.is_monotone()).count();
    let kinds: BTreeSet<String> = s
        .truth
        .records()
        .iter()
        .flat_map(|r| r.behaviors.iter())
        .map(|b| format!("{:?}", std::mem::discriminant(b)))
        .collect();
    let elapsed = s.elapsed + start.elapsed();
    check(
        s.truth.len() == 1000
            && kinds.len() == 10
            && host_mismatch == 0
            && port_mismatch == 0
            && missing == 0
            && non_monotone == 0
            && elapsed < Duration::from_secs(60),
        format!(
            "{} planted, {} behavior kinds, {} host groups, {host_mismatch} host / {port_mismatch} port mismatches, \
             {missing} missing, {non_monotone} non-monotone funnel rows, {:.1}s",
            s.truth.len(),
            kinds.len(),
            classes.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_single_count(s: &Scan) -> Verdict {
    let mut per_key: BTreeMap<(Addr128, Protocol), Vec<&DeploymentRecord>> = BTreeMap::new();
    for d in &s.deployments {
        per_key.entry((d.address, d.protocol)).or_default().push(d);
    }
    let both: Vec<_> = s.truth.records().iter().filter(|r| r.ports.iter().all(|p| p.class.is_some_and(|c| c.is_valid()))).collect();
    let exceptions = both
        .iter()
        .filter(|r| !matches!(per_key.get(&(r.address, r.protocol)).map(Vec::as_slice), Some([d]) if d.tls_adopting))
        .count();
    let duplicates = per_key.values().filter(|v| v.len() > 1).count();
    let expected: BTreeSet<_> = s.truth.records().iter().filter(|r| r.valid).map(|r| (r.address, r.protocol)).collect();
    let found: BTreeSet<_> = per_key.keys().copied().collect();
    check(
        !both.is_empty() && exceptions == 0 && duplicates == 0 && expected == found,
        format!(
            "{} hosts valid on both ports, {exceptions} exceptions, {duplicates} duplicate records, {} records for {} valid planted",
            both.len(),
            found.len(),
            expected.len()
        ),
    )
}

fn c3_politeness(s: &Scan) -> Verdict {
    let grants = s.campaign.arbiter().grants();
    let gap = min_host_gap(grants);
    let peak = audit_peak_rate(grants);
    let violations = audit_host_gaps(grants, GAP).len();
    check(
        s.targets >= 10_000 && gap.is_some_and(|g| g >= GAP) && peak <= RATE_CAP && violations == 0,
        format!(
            "{} tasks, {} handshakes, min host gap {:?}, peak {peak} pkt/s, {violations} violations",
            s.targets,
            grants.len(),
            gap
        ),
    )
}

fn c4_dedup() -> Verdict {
    const N: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut filter = DedupFilter::new(N as u64, 1e-4).map_err(|e| e.to_string())?;
    let mut exact: HashSet<u128> = HashSet::with_capacity(N);
    while exact.len() < N {
        let a: u128 = rng.gen();
        if exact.insert(a) {
            filter.check_and_insert(Addr128(a)).map_err(|e| e.to_string())?;
        }
    }
    let false_negatives = exact.iter().filter(|&&a| !filter.contains(Addr128(a))).count();
    let mut queries = 0u64;
    let mut false_positives = 0u64;
    while queries < N as u64 {
        let a: u128 = rng.gen();
        if exact.contains(&a) {
            continue;
        }
        queries += 1;
        false_positives += filter.contains(Addr128(a)) as u64;
    }
    let rate = false_positives as f64 / queries as f64;
    check(
        false_negatives == 0 && rate <= 2e-4,
        format!("{N} inserts, {false_negatives} false negatives, fp rate {rate:.2e} over {queries} fresh queries"),
    )
}

fn c5_recall() -> Verdict {
    let start = Instant::now();
    let mut spec = UniverseSpec::new(5);
    for i in 0..64u32 {
        spec.clusters.push(ClusterSpec {
            prefix: format!("2001:db8:5::{i:x}:0/124").parse().unwrap(),
            density: 1.0,
            count: 16,
            templates: vec![PlantTemplate { protocol: Protocol::Mqtt, behaviors: vec![Behavior::ValidPlain] }],
        });
    }
    let (_, truth) = build_universe(&spec).map_err(|e| e.to_string())?;
    let planted = common::planted(&truth);
    let mut regions: BTreeMap<u128, Vec<Addr128>> = BTreeMap::new();
    for &a in &planted {
        regions.entry(a.0 >> 4).or_default().push(a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seeds = Vec::new();
    for members in regions.values() {
        seeds.extend(members.choose_multiple(&mut rng, 5).copied());
    }
    let seed_set: BTreeSet<Addr128> = seeds.iter().copied().collect();
    let rest: BTreeSet<Addr128> = planted.iter().filter(|a| !seed_set.contains(a)).copied().collect();
    let budget = planted.len();

    let generated: BTreeSet<Addr128> = density_fillup_generate(&seeds, budget, DEFAULT_MIN_DENSITY, 5).into_iter().collect();
    let recall = generated.intersection(&rest).count() as f64 / rest.len() as f64;

    let cover: Prefix = "2001:db8:5::/64".parse().unwrap();
    let uniform: BTreeSet<Addr128> =
        (0..budget).map(|_| Addr128(cover.base().0 | rng.gen::<u64>() as u128)).collect();
    let contrast = uniform.intersection(&rest).count() as f64 / rest.len() as f64;
    let elapsed = start.elapsed();
    check(
        regions.values().all(|m| m.len() == 16) && recall >= 0.8 && contrast < 0.001 && elapsed < Duration::from_secs(30),
        format!(
            "{} dense /124s, {} seeds, budget {budget}: fill-up recall {:.2}%, uniform recall {:.3}%, {:.1}s",
            regions.len(),
            seeds.len(),
            recall * 100.0,
            contrast * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_feedback() -> Verdict {
    let seeds: Vec<Addr128> =
        ["2001:db8:1::1", "2001:db8:1::2", "2001:db8:2::1", "2001:db8:2::2"].iter().map(|s| s.parse().unwrap()).collect();
    let mut tree = PartitionTree::build(&seeds, PartitionConfig { max_leaf_wildcards: 1 }, 6);
    let ids: Vec<LeafId> = tree.leaf_ids().collect();
    if ids.len() != 2 {
        return Err(format!("expected two regions, got {}", ids.len()));
    }
    tree.apply_feedback(&BTreeMap::from([
        (ids[0], RegionFeedback { hits: 10, probes: 10 }),
        (ids[1], RegionFeedback { hits: 0, probes: 10 }),
    ]));
    let w: BTreeMap<LeafId, Ratio<u64>> = tree.allocation_weights().into_iter().collect();
    let ratio = w[&ids[0]] / w[&ids[1]];
    let split = tree.allocate(12);
    check(
        ratio == Ratio::from_integer(11) && split == vec![(ids[0], 11), (ids[1], 1)],
        format!("weights {} and {}, ratio {ratio}, allocate(12) = {:?}", w[&ids[0]], w[&ids[1]], split.iter().map(|p| p.1).collect::<Vec<_>>()),
    )
}

/// Brute-force metrics over plain vectors: no sets, no shared code with
/// the ledger.
struct Oracle {
    emitted: Vec<Vec<u32>>,
    valid: Vec<bool>,
    aliased: Vec<bool>,
}

impl Oracle {
    fn clean(&self, a: u32) -> bool {
        self.valid[a as usize] && !self.aliased[a as usize]
    }

    fn emits(&self, r: usize, a: u32) -> bool {
        self.emitted[r].contains(&a)
    }

    fn hitrate(&self, r: usize) -> Option<Ratio<u64>> {
        let n = self.emitted[r].len() as u64;
        let hits = self.emitted[r].iter().filter(|&&a| self.clean(a)).count() as u64;
        (n > 0).then(|| Ratio::new(hits, n))
    }

    fn uniqueness(&self, r: usize, runs: usize) -> Option<Ratio<u64>> {
        let found: Vec<u32> = self.emitted[r].iter().copied().filter(|&a| self.clean(a)).collect();
        let total: u64 = found.iter().map(|&a| (0..runs).filter(|&o| self.emits(o, a)).count() as u64).sum();
        (!found.is_empty()).then(|| Ratio::new(found.len() as u64, total))
    }

    fn gain(&self, a: usize, b: usize) -> u64 {
        self.emitted[a].iter().filter(|&&x| self.clean(x) && !self.emits(b, x)).count() as u64
    }
}

fn c7_metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let runs = rng.gen_range(2..=6);
        let universe = rng.gen_range(1..=40u32);
        // the last source is a seed list that is not one of the runs
        let tags: Vec<SourceTag> = (0..runs)
            .map(|i| SourceTag::generator(format!("g{i}"), SeedSource::TumHitlist))
            .chain([SourceTag::Seed(SeedSource::TumHitlist)])
            .collect();
        let mut emitted: Vec<Vec<u32>> = vec![Vec::new(); tags.len()];
        let density: f64 = rng.gen_range(0.0..1.0);
        for e in emitted.iter_mut() {
            for a in 0..universe {
                if rng.gen_bool(density) {
                    e.push(a);
                }
            }
        }
        let oracle = Oracle {
            valid: (0..universe).map(|_| rng.gen_bool(0.5)).collect(),
            aliased: (0..universe).map(|_| rng.gen_bool(0.1)).collect(),
            emitted,
        };

        let mut events: Vec<(u32, usize)> =
            oracle.emitted.iter().enumerate().flat_map(|(r, e)| e.iter().map(move |&a| (a, r))).collect();
        events.shuffle(&mut rng);
        let addr = |a: u32| Addr128(0x2001_0db8u128 << 96 | a as u128);
        let mut ledger = OriginLedger::new();
        for t in &tags {
            ledger.register(t.clone());
        }
        for (a, r) in events {
            ledger.record_origin(addr(a), tags[r].clone());
        }
        for a in 0..universe {
            if oracle.aliased[a as usize] {
                ledger.mark_aliased(addr(a));
            }
        }
        let valid: BTreeSet<Addr128> = (0..universe).filter(|&a| oracle.valid[a as usize]).map(addr).collect();
        let report = MetricsReport::compute(&ledger, &tags[..runs], &valid);

        let hitrates: Vec<Option<Ratio<u64>>> = (0..runs).map(|r| oracle.hitrate(r)).collect();
        let best = hitrates.iter().flatten().max().copied();
        for (r, m) in report.runs.iter().enumerate() {
            let normalized = hitrates[r].map(|h| match best {
                Some(b) if b != Ratio::from_integer(0) => h / b,
                _ => h,
            });
            if m.hitrate != hitrates[r] || m.normalized != normalized || m.uniqueness != oracle.uniqueness(r, runs) {
                mismatches += 1;
            }
        }
        for g in &report.gains {
            let idx = |t: &SourceTag| tags.iter().position(|x| x == t).expect("known tag");
            if g.gain != oracle.gain(idx(&g.from), idx(&g.over)) {
                mismatches += 1;
            }
        }
        if report.gains.len() != runs * (runs - 1) {
            mismatches += 1;
        }
    }

    let (x, y): (Addr128, Addr128) = ("2001:db8::1".parse().unwrap(), "2001:db8::2".parse().unwrap());
    let (g, h) = (SourceTag::generator("g", SeedSource::TumHitlist), SourceTag::generator("h", SeedSource::TumHitlist));
    let mut ledger = OriginLedger::new();
    ledger.record_all(&g, [x, y]);
    ledger.record_all(&h, [y]);
    let runs: BTreeSet<SourceTag> = [g.clone(), h].into();
    let fixture = ledger.uniqueness(&g, &runs, &[x, y].into()).map_err(|e| e.to_string())?;
    check(
        mismatches == 0 && fixture == Ratio::new(2, 3),
        format!("1000 random ledgers, {mismatches} mismatches; {{x,y}} overlap-1 uniqueness = {fixture}"),
    )
}

fn c8_combination() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut optimal = 0usize;
    let mut worst = f64::INFINITY;
    const FIXTURES: usize = 200;
    for _ in 0..FIXTURES {
        let n = rng.gen_range(1..=10usize);
        let universe = rng.gen_range(10..=60u32);
        let sets: Vec<BTreeSet<u32>> = (0..n)
            .map(|_| {
                let p: f64 = rng.gen_range(0.05..0.5);
                (0..universe).filter(|_| rng.gen_bool(p)).collect()
            })
            .collect();
        let k = rng.gen_range(1..=n);
        let cands: BTreeMap<SourceTag, BTreeSet<Addr128>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let tag = SourceTag::generator(format!("r{i:02}"), SeedSource::DnsZone);
                (tag, s.iter().map(|&a| Addr128(a as u128)).collect())
            })
            .collect();
        let greedy = greedy_max_coverage(&cands, k).last().map_or(0, |s| s.covered);
        let best = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize <= k)
            .map(|m| {
                let mut u: BTreeSet<u32> = BTreeSet::new();
                for (i, s) in sets.iter().enumerate() {
                    if m & (1 << i) != 0 {
                        u.extend(s);
                    }
                }
                u.len() as u64
            })
            .max()
            .unwrap_or(0);
        if greedy == best {
            optimal += 1;
        }
        if best > 0 {
            worst = worst.min(greedy as f64 / best as f64);
        }
    }
    let share = optimal as f64 / FIXTURES as f64;
    let bound = 1.0 - (-1.0f64).exp();
    check(
        share >= 0.95 && worst >= bound,
        format!("greedy optimal on {optimal}/{FIXTURES} fixtures ({:.1}%), worst ratio {worst:.3} (bound {bound:.3})", share * 100.0),
    )
}

fn c9_assessment(s: &mut Scan) -> Verdict {
    let assessment = assess(&mut s.campaign, &s.deployments, &GuidelineProfile::builtin());
    let mut findings: BTreeMap<(Addr128, Protocol), BTreeSet<FindingCategory>> = BTreeMap::new();
    for f in &assessment.findings {
        findings.entry((f.subject.address, f.subject.protocol)).or_default().insert(f.category);
    }
    let mut access: BTreeMap<(Addr128, Protocol), Vec<AccessVerdict>> = BTreeMap::new();
    for a in &assessment.access {
        access.entry((a.subject.address, a.subject.protocol)).or_default().push(a.verdict);
    }
    let mut disagreements = 0;
    let mut labelled = 0;
    for d in &s.deployments {
        let key = (d.address, d.protocol);
        let Some(truth) = s.truth.get(d.address, d.protocol) else {
            disagreements += 1;
            continue;
        };
        labelled += 1;
        let got = findings.get(&key).cloned().unwrap_or_default();
        let got_access = access.get(&key).cloned().unwrap_or_default();
        if got != truth.findings || got_access != truth.access.into_iter().collect::<Vec<_>>() {
            disagreements += 1;
        }
    }
    let violations = audit_host_gaps(s.campaign.arbiter().grants(), GAP).len();
    check(
        labelled > 0 && disagreements == 0 && violations == 0,
        format!(
            "{labelled} deployments graded, {} findings, {} access checks, {disagreements} disagreements, {violations} gap violations",
            assessment.findings.len(),
            assessment.access.len()
        ),
    )
}

fn c10_aliases(s: &mut Scan) -> Verdict {
    let cfg = AliasConfig { k: 16, q: 16, rng_seed: 10, ..AliasConfig::default() };
    let verdicts = detect_aliases(&mut s.campaign, &s.deployments, &cfg, &BannerAndCertificate).map_err(|e| e.to_string())?;
    let protocol_of: BTreeMap<Addr128, Protocol> = s.deployments.iter().map(|d| (d.address, d.protocol)).collect();
    let flagged: BTreeSet<(Addr128, Protocol)> =
        verdicts.iter().filter(|v| v.aliased).map(|v| (v.address, protocol_of[&v.address])).collect();
    let planted: BTreeSet<(Addr128, Protocol)> =
        s.truth.records().iter().filter(|r| r.aliased()).map(|r| (r.address, r.protocol)).collect();
    let missed = planted.difference(&flagged).count();
    let false_positives = flagged.difference(&planted).count();
    let violations = audit_host_gaps(s.campaign.arbiter().grants(), GAP).len();
    check(
        !planted.is_empty() && missed == 0 && false_positives == 0 && violations == 0,
        format!(
            "{} aliased planted, {} deployments checked, {missed} missed, {false_positives} false positives, {violations} gap violations",
            planted.len(),
            verdicts.len()
        ),
    )
}

fn c11_no_coap() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = common::write_campaign(dir.path(), 11, &[Protocol::Amqp, Protocol::Mqtt, Protocol::OpcUa], &common::unplanted(20), "out");
    let cfg = CampaignConfig::load(&path).map_err(|e| e.to_string())?;
    let summary = run_pipeline(&cfg, Stage::Report).map_err(|e| e.to_string())?;
    let report = summary.report.clone().ok_or("no report")?;
    let coap = report.protocols[&Protocol::Coap];
    let others: u64 = report.protocols.values().map(|p| p.valid).sum();
    let table = fs::read_to_string(cfg.output_dir.join("report/summary.csv")).map_err(|e| e.to_string())?;
    let row = table.lines().find(|l| l.starts_with("COAP,")).unwrap_or("").to_string();
    check(
        summary.exit_code() == 0 && coap.valid == 0 && row.starts_with("COAP,0,") && others > 0,
        format!("exit code {}, {others} valid deployments, row \"{row}\"", summary.exit_code()),
    )
}

fn artifacts(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "csv")) {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap_or_default());
            }
        }
    }
    out
}

fn c12_determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let protocols = Protocol::ALL;
    let a = common::write_campaign(dir.path(), 12, &protocols, &common::unplanted(20), "run-a");
    let b = common::write_campaign(dir.path(), 12, &protocols, &common::unplanted(20), "run-b");
    let mut outputs = Vec::new();
    for path in [a, b] {
        let cfg = CampaignConfig::load(&path).map_err(|e| e.to_string())?;
        run_pipeline(&cfg, Stage::Report).map_err(|e| e.to_string())?;
        outputs.push(artifacts(&cfg.output_dir));
    }
    let differing: Vec<&String> = outputs[0]
        .keys()
        .chain(outputs[1].keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| outputs[0].get(*k) != outputs[1].get(*k))
        .collect();
    let bytes: usize = outputs[0].values().map(Vec::len).sum();
    check(
        outputs[0].len() >= 10 && differing.is_empty(),
        format!("{} JSONL/CSV artifacts ({bytes} bytes) per run, differing: {differing:?}", outputs[0].len()),
    )
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (tag, detail) = match &verdict {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {n:>2} {name} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    verdict.is_ok()
}

fn main() -> ExitCode {
    let (universe, truth) = common::build(1, &Protocol::ALL);
    let mut scan = scan(&universe, &truth);
    let results = [
        run(1, "validation oracle agreement", || c1_validation(&scan)),
        run(2, "single-count rule", || c2_single_count(&scan)),
        run(3, "politeness", || c3_politeness(&scan)),
        run(4, "dedup filter", c4_dedup),
        run(5, "generator recall", c5_recall),
        run(6, "active feedback", c6_feedback),
        run(7, "metrics oracle equivalence", c7_metrics),
        run(8, "combination finder", c8_combination),
        run(9, "security assessment", || c9_assessment(&mut scan)),
        run(10, "alias detection", || c10_aliases(&mut scan)),
        run(11, "zero-result regression", c11_no_coap),
        run(12, "end-to-end determinism", c12_determinism),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
