//! Provenance ledger and the metrics built on it: hitrate, normalized
//! hitrate, uniqueness, gain, minimal source combinations and AS
//! annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Addr128, Prefix};
use crate::blockdedup::PrefixTrie;
use crate::model::{ProvenancedAddress, SourceTag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("{0} emitted no addresses")]
    EmptyGeneratorOutput(SourceTag),
    #[error("{0} found no valid addresses")]
    NoFoundAddresses(SourceTag),
    #[error("coverage target {0} outside (0, 1]")]
    InvalidTarget(String),
    #[error("routing snapshot line {line}: {message}")]
    MalformedRoute { line: usize, message: String },
    #[error("AS type map: {0}")]
    MalformedTypeMap(String),
}

/// Origins of every probed address, and the addresses every source or
/// generator run emitted. Both views only ever grow.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OriginLedger {
    origins: BTreeMap<Addr128, BTreeSet<SourceTag>>,
    emitted: BTreeMap<SourceTag, BTreeSet<Addr128>>,
    aliased: BTreeSet<Addr128>,
}

impl OriginLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `origin` to the origin set of `address`; idempotent.
    pub fn record_origin(&mut self, address: Addr128, origin: SourceTag) {
        self.emitted.entry(origin.clone()).or_default().insert(address);
        self.origins.entry(address).or_default().insert(origin);
    }

    pub fn record_all(&mut self, origin: &SourceTag, addresses: impl IntoIterator<Item = Addr128>) {
        for a in addresses {
            self.record_origin(a, origin.clone());
        }
    }

    pub fn record_entry(&mut self, entry: &ProvenancedAddress) {
        for o in &entry.origins {
            self.record_origin(entry.address, o.clone());
        }
        if entry.aliased {
            self.mark_aliased(entry.address);
        }
    }

    /// Registers a source even if it emitted nothing, so it shows up in
    /// reports.
    pub fn register(&mut self, origin: SourceTag) {
        self.emitted.entry(origin).or_default();
    }

    pub fn mark_aliased(&mut self, address: Addr128) {
        self.aliased.insert(address);
    }

    pub fn is_aliased(&self, address: Addr128) -> bool {
        self.aliased.contains(&address)
    }

    pub fn aliased(&self) -> &BTreeSet<Addr128> {
        &self.aliased
    }

    pub fn origins(&self, address: Addr128) -> Option<&BTreeSet<SourceTag>> {
        self.origins.get(&address)
    }

    pub fn emitted(&self, origin: &SourceTag) -> Option<&BTreeSet<Addr128>> {
        self.emitted.get(origin)
    }

    pub fn sources(&self) -> impl Iterator<Item = &SourceTag> {
        self.emitted.keys()
    }

    pub fn addresses(&self) -> impl Iterator<Item = (&Addr128, &BTreeSet<SourceTag>)> {
        self.origins.iter()
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    fn emitted_or_empty(&self, origin: &SourceTag) -> &BTreeSet<Addr128> {
        static EMPTY: BTreeSet<Addr128> = BTreeSet::new();
        self.emitted.get(origin).unwrap_or(&EMPTY)
    }

    /// Valid addresses emitted by `origin`.
    pub fn found(&self, origin: &SourceTag, valid: &BTreeSet<Addr128>) -> BTreeSet<Addr128> {
        self.emitted_or_empty(origin).intersection(valid).copied().collect()
    }

    /// |valid ∩ emitted| / |emitted|.
    pub fn hitrate(&self, origin: &SourceTag, valid: &BTreeSet<Addr128>) -> Result<Ratio<u64>, TraceError> {
        let emitted = self.emitted_or_empty(origin);
        if emitted.is_empty() {
            return Err(TraceError::EmptyGeneratorOutput(origin.clone()));
        }
        let hits = if emitted.len() <= valid.len() {
            emitted.iter().filter(|a| valid.contains(a)).count()
        } else {
            valid.iter().filter(|a| emitted.contains(a)).count()
        };
        Ok(Ratio::new(hits as u64, emitted.len() as u64))
    }

    /// |A_g| / Σ_{a ∈ A_g} |{r ∈ runs : a ∈ emitted(r)}|, where A_g are the
    /// valid addresses `origin` emitted. `origin` always counts as a run.
    pub fn uniqueness(
        &self,
        origin: &SourceTag,
        runs: &BTreeSet<SourceTag>,
        valid: &BTreeSet<Addr128>,
    ) -> Result<Ratio<u64>, TraceError> {
        let found = self.found(origin, valid);
        if found.is_empty() {
            return Err(TraceError::NoFoundAddresses(origin.clone()));
        }
        let multiplicity: u64 = found
            .iter()
            .map(|a| {
                let others = self.origins[a].iter().filter(|o| *o != origin && runs.contains(o)).count();
                1 + others as u64
            })
            .sum();
        Ok(Ratio::new(found.len() as u64, multiplicity))
    }

    /// |valid(a) \ valid(b)|.
    pub fn gain(&self, a: &SourceTag, b: &SourceTag, valid: &BTreeSet<Addr128>) -> u64 {
        let other = self.emitted_or_empty(b);
        self.emitted_or_empty(a).iter().filter(|x| valid.contains(x) && !other.contains(x)).count() as u64
    }
}

/// Divides every hitrate by the largest one, so the best run is exactly 1.
/// All-zero inputs stay zero.
pub fn normalize(hitrates: &[Ratio<u64>]) -> Vec<Ratio<u64>> {
    let max = hitrates.iter().copied().max().unwrap_or_else(|| Ratio::from_integer(0));
    hitrates
        .iter()
        .map(|h| if max == Ratio::from_integer(0) { *h } else { *h / max })
        .collect()
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn ratio_text(r: Option<Ratio<u64>>) -> String {
    r.map(|r| format!("{:.6}", ratio_f64(r))).unwrap_or_default()
}

/// Metrics of one source or generator run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetrics {
    pub run: SourceTag,
    pub generated: u64,
    pub valid: u64,
    /// Valid addresses left out of `valid` because they sit in an aliased
    /// prefix.
    pub aliased: u64,
    pub hitrate: Option<Ratio<u64>>,
    pub normalized: Option<Ratio<u64>>,
    pub uniqueness: Option<Ratio<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainRow {
    pub from: SourceTag,
    pub over: SourceTag,
    pub gain: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
    pub gains: Vec<GainRow>,
}

impl MetricsReport {
    /// Metrics for `runs` against the valid addresses. Aliased valid
    /// addresses are excluded from hits and counted per run instead.
    pub fn compute(ledger: &OriginLedger, runs: &[SourceTag], valid: &BTreeSet<Addr128>) -> Self {
        let clean: BTreeSet<Addr128> = valid.iter().filter(|a| !ledger.is_aliased(**a)).copied().collect();
        let run_set: BTreeSet<SourceTag> = runs.iter().cloned().collect();
        let hitrates: Vec<Option<Ratio<u64>>> = runs.iter().map(|r| ledger.hitrate(r, &clean).ok()).collect();
        let present: Vec<Ratio<u64>> = hitrates.iter().flatten().copied().collect();
        let mut normalized = normalize(&present).into_iter();
        let metrics = runs
            .iter()
            .zip(&hitrates)
            .map(|(r, h)| {
                let emitted = ledger.emitted_or_empty(r);
                RunMetrics {
                    run: r.clone(),
                    generated: emitted.len() as u64,
                    valid: emitted.intersection(&clean).count() as u64,
                    aliased: emitted.iter().filter(|a| valid.contains(a) && ledger.is_aliased(**a)).count() as u64,
                    hitrate: *h,
                    normalized: h.and_then(|_| normalized.next()),
                    uniqueness: ledger.uniqueness(r, &run_set, &clean).ok(),
                }
            })
            .collect();
        let mut gains = Vec::new();
        for a in runs {
            for b in runs.iter().filter(|b| *b != a) {
                gains.push(GainRow { from: a.clone(), over: b.clone(), gain: ledger.gain(a, b, &clean) });
            }
        }
        MetricsReport { runs: metrics, gains }
    }

    /// `run,source,generated,valid,hitrate,normalized,uniqueness,aliased`
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "run,source,generated,valid,hitrate,normalized,uniqueness,aliased")?;
        for m in &self.runs {
            let name = match &m.run {
                SourceTag::Seed(_) => "seed".to_string(),
                SourceTag::Generator { generator, .. } => generator.clone(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                name,
                m.run.seed_source(),
                m.generated,
                m.valid,
                ratio_text(m.hitrate),
                ratio_text(m.normalized),
                ratio_text(m.uniqueness),
                m.aliased
            )?;
        }
        Ok(())
    }
}

/// One greedy pick and the coverage reached after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverStep {
    pub source: SourceTag,
    pub marginal: u64,
    pub covered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub selected: Vec<CoverStep>,
    pub covered: u64,
    pub total: u64,
    pub coverage: f64,
    pub target: f64,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("coverage target {target} unreachable; best is {}", best.coverage)]
pub struct TargetUnreachable {
    pub target: f64,
    pub best: Combination,
}

/// Greedy max-coverage order: each step takes the candidate adding the
/// most uncovered addresses, ties broken by the smaller tag. Stops when
/// no candidate adds anything.
pub fn greedy_order(candidates: &BTreeMap<SourceTag, BTreeSet<Addr128>>) -> Vec<CoverStep> {
    let mut covered: BTreeSet<Addr128> = BTreeSet::new();
    let mut left: Vec<(&SourceTag, &BTreeSet<Addr128>)> = candidates.iter().collect();
    let mut steps = Vec::new();
    loop {
        let best = left
            .iter()
            .enumerate()
            .map(|(i, (_, s))| (i, s.difference(&covered).count()))
            .filter(|&(_, m)| m > 0)
            // max_by_key keeps the last maximum; reverse so the first wins
            .rev()
            .max_by_key(|&(_, m)| m);
        let Some((i, marginal)) = best else { break };
        let (tag, set) = left.remove(i);
        covered.extend(set.iter().copied());
        steps.push(CoverStep { source: tag.clone(), marginal: marginal as u64, covered: covered.len() as u64 });
    }
    steps
}

/// The first `k` greedy picks.
pub fn greedy_max_coverage(candidates: &BTreeMap<SourceTag, BTreeSet<Addr128>>, k: usize) -> Vec<CoverStep> {
    let mut order = greedy_order(candidates);
    order.truncate(k);
    order
}

/// Smallest greedy prefix of sources whose valid addresses cover at least
/// `target` of all valid addresses.
pub fn minimal_combination(
    ledger: &OriginLedger,
    candidates: &[SourceTag],
    valid: &BTreeSet<Addr128>,
    target: f64,
) -> Result<Result<Combination, TargetUnreachable>, TraceError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(TraceError::InvalidTarget(target.to_string()));
    }
    let sets: BTreeMap<SourceTag, BTreeSet<Addr128>> =
        candidates.iter().map(|c| (c.clone(), ledger.found(c, valid))).collect();
    let total = valid.len() as u64;
    let order = greedy_order(&sets);
    let reaches = |covered: u64| total > 0 && covered as f64 >= target * total as f64;
    let cut = order.iter().position(|s| reaches(s.covered)).map(|i| i + 1);
    let selected: Vec<CoverStep> = order[..cut.unwrap_or(order.len())].to_vec();
    let covered = selected.last().map_or(0, |s| s.covered);
    let combo = Combination {
        selected,
        covered,
        total,
        coverage: if total == 0 { 0.0 } else { covered as f64 / total as f64 },
        target,
        reached: cut.is_some(),
    };
    Ok(if combo.reached { Ok(combo) } else { Err(TargetUnreachable { target, best: combo }) })
}

/// Announced prefixes and their origin AS.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    trie: PrefixTrie<u32>,
}

impl RoutingTable {
    /// Parses `prefix asn` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut trie = PrefixTrie::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| TraceError::MalformedRoute { line: i + 1, message };
            let mut parts = line.split_whitespace();
            let (Some(p), Some(asn), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `prefix asn`".into()));
            };
            let prefix: Prefix = p.parse().map_err(|e| bad(format!("{e}")))?;
            let asn: u32 = asn.trim_start_matches("AS").parse().map_err(|e| bad(format!("{e}")))?;
            trie.insert(prefix, asn);
        }
        Ok(RoutingTable { trie })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = fs::read_to_string(path)
            .map_err(|e| TraceError::MalformedRoute { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    pub fn origin_as(&self, a: Addr128) -> Option<u32> {
        self.trie.longest_match(a).map(|(_, asn)| *asn)
    }
}

/// AS number to type label, e.g. `{"64500": "Content"}`.
pub fn parse_type_map(json: &str) -> Result<BTreeMap<u32, String>, TraceError> {
    let raw: BTreeMap<String, String> =
        serde_json::from_str(json).map_err(|e| TraceError::MalformedTypeMap(e.to_string()))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim_start_matches("AS")
                .parse()
                .map(|asn| (asn, v))
                .map_err(|_| TraceError::MalformedTypeMap(format!("bad AS number {k:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsAnnotation {
    pub asn: Option<u32>,
    pub as_type: Option<String>,
    /// No IPv4 deployment of the comparison set lives in this AS.
    pub v6_only: bool,
}

pub fn annotate_as(
    address: Addr128,
    routes: &RoutingTable,
    types: &BTreeMap<u32, String>,
    v4_asns: &BTreeSet<u32>,
) -> AsAnnotation {
    match routes.origin_as(address) {
        None => AsAnnotation::default(),
        Some(asn) => AsAnnotation {
            asn: Some(asn),
            as_type: types.get(&asn).cloned(),
            v6_only: !v4_asns.contains(&asn),
        },
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::SeedSource;

    fn gen(name: &str) -> SourceTag {
        SourceTag::generator(name, SeedSource::DnsZone)
    }

    fn a(i: u128) -> Addr128 {
        Addr128((0x2001_0db8u128 << 96) | i)
    }

    fn set(xs: &[u128]) -> BTreeSet<Addr128> {
        xs.iter().map(|&i| a(i)).collect()
    }

    #[test]
    fn record_origin_is_idempotent() {
        let mut l = OriginLedger::new();
        l.record_origin(a(1), SeedSource::TumHitlist.into());
        assert_eq!(l.origins(a(1)).unwrap().len(), 1);
        l.record_origin(a(1), SourceTag::generator("6Graph", SeedSource::DnsZoneWww));
        assert_eq!(l.origins(a(1)).unwrap().len(), 2);
        let before = l.clone();
        l.record_origin(a(1), SeedSource::TumHitlist.into());
        assert_eq!(l, before);
    }

    #[test]
    fn hitrate_counts() {
        let mut l = OriginLedger::new();
        let g = gen("g");
        l.record_all(&g, (0..1000).map(a));
        assert_eq!(l.hitrate(&g, &set(&[3, 999, 5000])).unwrap(), Ratio::new(2, 1000));
        assert_eq!(l.hitrate(&g, &(0..1000).map(a).collect()).unwrap(), Ratio::from_integer(1));
        l.register(gen("empty"));
        assert_eq!(l.hitrate(&gen("empty"), &set(&[1])), Err(TraceError::EmptyGeneratorOutput(gen("empty"))));
    }

    #[test]
    fn normalized_max_is_one() {
        let n = normalize(&[Ratio::new(1, 10), Ratio::new(1, 4), Ratio::new(1, 8)]);
        assert_eq!(n, vec![Ratio::new(2, 5), Ratio::from_integer(1), Ratio::new(1, 2)]);
        assert_eq!(normalize(&[Ratio::from_integer(0)]), vec![Ratio::from_integer(0)]);
    }

    #[test]
    fn uniqueness_fixtures() {
        let mut l = OriginLedger::new();
        let (g, h) = (gen("g"), gen("h"));
        l.record_all(&g, [a(1), a(2)]);
        l.record_origin(a(1), h.clone());
        let runs = BTreeSet::from([g.clone(), h.clone()]);
        let valid = set(&[1, 2]);
        assert_eq!(l.uniqueness(&g, &runs, &valid).unwrap(), Ratio::new(2, 3));
        assert_eq!(l.uniqueness(&g, &BTreeSet::from([g.clone()]), &valid).unwrap(), Ratio::from_integer(1));

        let mut l = OriginLedger::new();
        let runs: Vec<SourceTag> = (0..4).map(|i| gen(&format!("r{i}"))).collect();
        for r in &runs {
            l.record_all(r, [a(1), a(2), a(3)]);
        }
        let all = runs.iter().cloned().collect();
        assert_eq!(l.uniqueness(&runs[0], &all, &set(&[1, 2, 3])).unwrap(), Ratio::new(1, 4));
        assert_eq!(l.uniqueness(&runs[0], &all, &set(&[9])), Err(TraceError::NoFoundAddresses(runs[0].clone())));
    }

    #[test]
    fn combination_basics() {
        let mut l = OriginLedger::new();
        let (x, y, z) = (gen("x"), gen("y"), gen("z"));
        l.record_all(&x, (0..5).map(a));
        l.record_all(&y, (5..10).map(a));
        l.record_all(&z, (0..3).map(a));
        let valid: BTreeSet<Addr128> = (0..10).map(a).collect();
        let c = minimal_combination(&l, &[x.clone(), y.clone(), z.clone()], &valid, 1.0).unwrap().unwrap();
        let picked: Vec<_> = c.selected.iter().map(|s| s.source.clone()).collect();
        assert_eq!(picked, vec![x.clone(), y.clone()]);
        assert_eq!(c.coverage, 1.0);

        let c = minimal_combination(&l, &[x.clone(), z.clone()], &valid, 0.5).unwrap().unwrap();
        assert_eq!(c.selected.len(), 1);
        assert_eq!(c.selected[0].source, x);

        let err = minimal_combination(&l, std::slice::from_ref(&z), &valid, 0.9).unwrap().unwrap_err();
        assert_eq!(err.best.covered, 3);
        assert!(minimal_combination(&l, &[z], &valid, 0.0).is_err());
    }

    #[test]
    fn greedy_ties_pick_smaller_tag() {
        let cands = BTreeMap::from([(gen("b"), set(&[1, 2])), (gen("a"), set(&[3, 4]))]);
        let order = greedy_order(&cands);
        assert_eq!(order[0].source, gen("a"));
        assert_eq!(order[1].covered, 4);
    }

    #[test]
    fn as_annotation() {
        let routes = RoutingTable::parse("2001:db8::/32 64500\n2001:db8:1::/48 64501 # more specific\n").unwrap();
        let types = parse_type_map(r#"{"64500": "Content", "AS64501": "ISP"}"#).unwrap();
        let v4 = BTreeSet::from([64501]);
        let x = annotate_as("2001:db8::5".parse().unwrap(), &routes, &types, &v4);
        assert_eq!(x, AsAnnotation { asn: Some(64500), as_type: Some("Content".into()), v6_only: true });
        let y = annotate_as("2001:db8:1::5".parse().unwrap(), &routes, &types, &v4);
        assert_eq!((y.asn, y.v6_only), (Some(64501), false));
        assert_eq!(annotate_as("2001:db9::1".parse().unwrap(), &routes, &types, &v4), AsAnnotation::default());
        assert!(RoutingTable::parse("2001:db8::/32").is_err());
    }

    #[test]
    fn report_keeps_aliased_separate() {
        let mut l = OriginLedger::new();
        let g = gen("g");
        l.record_all(&g, (0..4).map(a));
        l.mark_aliased(a(0));
        let r = MetricsReport::compute(&l, &[g], &set(&[0, 1]));
        assert_eq!((r.runs[0].valid, r.runs[0].aliased), (1, 1));
        assert_eq!(r.runs[0].hitrate, Some(Ratio::new(1, 4)));
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("g,DNS,4,1,0.250000,1.000000,1.000000,1"));
    }

    fn random_ledger(rng: &mut ChaCha8Rng) -> (OriginLedger, Vec<SourceTag>, BTreeSet<Addr128>) {
        let runs: Vec<SourceTag> = (0..rng.gen_range(1..6)).map(|i| gen(&format!("r{i}"))).collect();
        let mut l = OriginLedger::new();
        for r in &runs {
            l.register(r.clone());
            for _ in 0..rng.gen_range(0..30) {
                l.record_origin(a(rng.gen_range(0..40)), r.clone());
            }
        }
        (l, runs, (0..40).filter(|_| rng.gen_bool(0.3)).map(a).collect())
    }

    proptest! {
        #[test]
        fn double_counting_identity(seed in any::<u64>()) {
            let (l, runs, valid) = random_ledger(&mut ChaCha8Rng::seed_from_u64(seed));
            let found_per_run: usize = runs.iter().map(|r| l.found(r, &valid).len()).sum();
            let multiplicities: usize = valid.iter().filter_map(|v| l.origins(*v)).map(|o| o.len()).sum();
            prop_assert_eq!(found_per_run, multiplicities);
        }

        #[test]
        fn gain_antisymmetry(seed in any::<u64>()) {
            let (l, runs, valid) = random_ledger(&mut ChaCha8Rng::seed_from_u64(seed));
            for x in &runs {
                for y in &runs {
                    let lhs = l.gain(x, y, &valid) as i64 - l.gain(y, x, &valid) as i64;
                    let rhs = l.found(x, &valid).len() as i64 - l.found(y, &valid).len() as i64;
                    prop_assert_eq!(lhs, rhs);
                }
            }
        }

        #[test]
        fn metric_ranges(seed in any::<u64>()) {
            let (l, runs, valid) = random_ledger(&mut ChaCha8Rng::seed_from_u64(seed));
            let r = MetricsReport::compute(&l, &runs, &valid);
            let one = Ratio::from_integer(1);
            for m in &r.runs {
                if let Some(h) = m.hitrate { prop_assert!(h <= one); }
                if let Some(u) = m.uniqueness { prop_assert!(u > Ratio::from_integer(0) && u <= one); }
            }
            let norms: Vec<_> = r.runs.iter().filter_map(|m| m.normalized).collect();
            if r.runs.iter().any(|m| m.valid > 0) {
                prop_assert_eq!(norms.iter().max(), Some(&one));
            }
        }
    }
}
