//! Active hierarchical partitioning.
//!
//! Seeds are split recursively on the nybble with the highest entropy
//! (lowest position wins ties) until a region varies in at most
//! `max_leaf_wildcards` positions. Each step spreads the probe budget over
//! open leaves in proportion to their smoothed success rate
//! (hits + 1) / (probes + 2), then emits unprobed members of each leaf.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addr::{Addr128, NYBBLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LeafId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegionFeedback {
    pub hits: u64,
    pub probes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub max_leaf_wildcards: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { max_leaf_wildcards: 2 }
    }
}

/// A node of the partition tree: positions where all its seeds agree are
/// fixed, the others are wildcards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionNode {
    pub pattern: Addr128,
    pub wildcards: Vec<usize>,
    pub seed_count: u64,
    pub children: Vec<RegionNode>,
    pub leaf: Option<LeafId>,
}

impl RegionNode {
    pub fn enumerable_size(&self) -> u128 {
        16u128.saturating_pow(self.wildcards.len() as u32)
    }

    pub fn density(&self) -> f64 {
        self.seed_count as f64 / self.enumerable_size() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Leaf {
    pattern: Addr128,
    wildcards: Vec<usize>,
    seeds: BTreeSet<Addr128>,
    stats: RegionFeedback,
    // affine walk over member indices: index(i) = (stride * i + offset) mod size
    cursor: u64,
    stride: u64,
    offset: u64,
    closed: bool,
}

impl Leaf {
    fn size(&self) -> u64 {
        16u64.pow(self.wildcards.len() as u32)
    }

    fn remaining(&self) -> u64 {
        self.size() - self.cursor
    }

    fn member(&self, mut index: u64) -> Addr128 {
        let mut a = self.pattern;
        for &pos in self.wildcards.iter().rev() {
            a = a.with_nybble(pos, (index % 16) as u8);
            index /= 16;
        }
        a
    }

    fn next_unprobed(&mut self) -> Option<Addr128> {
        let size = self.size();
        while self.cursor < size {
            let idx = (self.stride.wrapping_mul(self.cursor).wrapping_add(self.offset)) % size;
            self.cursor += 1;
            let a = self.member(idx);
            if !self.seeds.contains(&a) {
                return Some(a);
            }
        }
        self.closed = true;
        None
    }

    fn weight(&self) -> Ratio<u64> {
        Ratio::new(self.stats.hits + 1, self.stats.probes + 2)
    }
}

/// The partition tree and per-leaf probing state. Owned by a single feedback
/// loop that alternates `step` with probing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTree {
    root: Option<RegionNode>,
    leaves: Vec<Leaf>,
    emitted: BTreeMap<Addr128, LeafId>,
}

fn position_entropy(seeds: &[Addr128], pos: usize) -> f64 {
    let mut counts = [0u64; 16];
    for s in seeds {
        counts[s.nybble(pos) as usize] += 1;
    }
    // sort so equal count multisets give bit-identical sums
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let total = seeds.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

fn varying_positions(seeds: &[Addr128]) -> Vec<usize> {
    (0..NYBBLES)
        .filter(|&p| seeds.iter().any(|s| s.nybble(p) != seeds[0].nybble(p)))
        .collect()
}

impl PartitionTree {
    pub fn build(seeds: &[Addr128], config: PartitionConfig, rng_seed: u64) -> Self {
        let unique: Vec<Addr128> = seeds.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut tree = PartitionTree {
            root: None,
            leaves: Vec::new(),
            emitted: BTreeMap::new(),
        };
        if unique.is_empty() {
            return tree;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let root = tree.split(&unique, &config, &mut rng);
        tree.root = Some(root);
        tree
    }

    fn split(&mut self, seeds: &[Addr128], config: &PartitionConfig, rng: &mut ChaCha8Rng) -> RegionNode {
        let varying = varying_positions(seeds);
        let pattern = varying.iter().fold(seeds[0], |a, &p| a.with_nybble(p, 0));

        if varying.len() <= config.max_leaf_wildcards.max(1) {
            // leaves always have at least the final nybble free to explore
            let wildcards = if varying.is_empty() { vec![NYBBLES - 1] } else { varying.clone() };
            let pattern = wildcards.iter().fold(pattern, |a, &p| a.with_nybble(p, 0));
            let id = LeafId(self.leaves.len());
            let size = 16u64.pow(wildcards.len() as u32);
            self.leaves.push(Leaf {
                pattern,
                wildcards: wildcards.clone(),
                seeds: seeds.iter().copied().collect(),
                stats: RegionFeedback::default(),
                cursor: 0,
                stride: rng.gen_range(0..size / 2) * 2 + 1,
                offset: rng.gen_range(0..size),
                closed: false,
            });
            return RegionNode {
                pattern,
                wildcards,
                seed_count: seeds.len() as u64,
                children: Vec::new(),
                leaf: Some(id),
            };
        }

        let split_pos = varying
            .iter()
            .copied()
            .map(|p| (p, position_entropy(seeds, p)))
            .max_by(|(pa, ea), (pb, eb)| ea.partial_cmp(eb).unwrap_or(Ordering::Equal).then(pb.cmp(pa)))
            .map(|(p, _)| p)
            .expect("varying is non-empty");

        let mut groups: BTreeMap<u8, Vec<Addr128>> = BTreeMap::new();
        for &s in seeds {
            groups.entry(s.nybble(split_pos)).or_default().push(s);
        }
        let children = groups
            .into_values()
            .map(|g| self.split(&g, config, rng))
            .collect();
        RegionNode {
            pattern,
            wildcards: varying,
            seed_count: seeds.len() as u64,
            children,
            leaf: None,
        }
    }

    pub fn root(&self) -> Option<&RegionNode> {
        self.root.as_ref()
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = LeafId> + '_ {
        (0..self.leaves.len()).map(LeafId)
    }

    pub fn open_leaves(&self) -> impl Iterator<Item = LeafId> + '_ {
        self.leaves
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.closed)
            .map(|(i, _)| LeafId(i))
    }

    pub fn leaf_stats(&self, id: LeafId) -> RegionFeedback {
        self.leaves[id.0].stats
    }

    pub fn leaf_prefix_pattern(&self, id: LeafId) -> (Addr128, &[usize]) {
        let l = &self.leaves[id.0];
        (l.pattern, &l.wildcards)
    }

    /// Which leaf an emitted address came from.
    pub fn leaf_of(&self, a: Addr128) -> Option<LeafId> {
        self.emitted.get(&a).copied()
    }

    pub fn apply_feedback(&mut self, feedback: &BTreeMap<LeafId, RegionFeedback>) {
        for (id, fb) in feedback {
            if let Some(leaf) = self.leaves.get_mut(id.0) {
                leaf.stats.hits += fb.hits;
                leaf.stats.probes += fb.probes;
            }
        }
    }

    /// Aggregates probe results for previously emitted addresses into
    /// per-leaf feedback. Unknown addresses are ignored.
    pub fn feedback_from_results(&self, results: impl IntoIterator<Item = (Addr128, bool)>) -> BTreeMap<LeafId, RegionFeedback> {
        let mut out: BTreeMap<LeafId, RegionFeedback> = BTreeMap::new();
        for (a, hit) in results {
            if let Some(id) = self.leaf_of(a) {
                let e = out.entry(id).or_default();
                e.probes += 1;
                e.hits += hit as u64;
            }
        }
        out
    }

    /// Exact allocation weight (hits + 1) / (probes + 2) of each open leaf.
    pub fn allocation_weights(&self) -> Vec<(LeafId, Ratio<u64>)> {
        self.open_leaves().map(|id| (id, self.leaves[id.0].weight())).collect()
    }

    /// Splits `budget` across open leaves in proportion to their weights
    /// (largest-remainder rounding, capped by what each leaf has left).
    pub fn allocate(&self, budget: u64) -> Vec<(LeafId, u64)> {
        let mut active: Vec<(LeafId, f64, u64)> = self
            .open_leaves()
            .map(|id| {
                let l = &self.leaves[id.0];
                let w = l.weight();
                (id, *w.numer() as f64 / *w.denom() as f64, l.remaining())
            })
            .collect();
        let mut fixed: BTreeMap<LeafId, u64> = BTreeMap::new();
        let mut left = budget;

        loop {
            if active.is_empty() || left == 0 {
                break;
            }
            let total: f64 = active.iter().map(|(_, w, _)| w).sum();
            let quotas: Vec<f64> = active.iter().map(|(_, w, _)| left as f64 * w / total).collect();
            let mut alloc: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
            let mut rest = left - alloc.iter().sum::<u64>();
            let mut order: Vec<usize> = (0..active.len()).collect();
            order.sort_by(|&i, &j| {
                let ri = quotas[i] - quotas[i].floor();
                let rj = quotas[j] - quotas[j].floor();
                rj.partial_cmp(&ri).unwrap_or(Ordering::Equal).then(i.cmp(&j))
            });
            for &i in order.iter().cycle().take(active.len() * 2) {
                if rest == 0 {
                    break;
                }
                alloc[i] += 1;
                rest -= 1;
            }
            let saturated: Vec<usize> = (0..active.len()).filter(|&i| alloc[i] >= active[i].2).collect();
            if saturated.is_empty() {
                for (i, (id, _, _)) in active.iter().enumerate() {
                    fixed.insert(*id, alloc[i]);
                }
                break;
            }
            for &i in saturated.iter().rev() {
                let (id, _, cap) = active.remove(i);
                fixed.insert(id, cap);
                left -= cap;
            }
        }
        fixed.into_iter().filter(|(_, n)| *n > 0).collect()
    }

    /// Applies feedback, then emits up to `step_budget` unprobed addresses.
    pub fn step(&mut self, feedback: &BTreeMap<LeafId, RegionFeedback>, step_budget: u64) -> Vec<Addr128> {
        self.apply_feedback(feedback);
        if step_budget == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (id, n) in self.allocate(step_budget) {
            let leaf = &mut self.leaves[id.0];
            for _ in 0..n {
                match leaf.next_unprobed() {
                    Some(a) => {
                        self.emitted.insert(a, id);
                        out.push(a);
                    }
                    None => break,
                }
            }
            if leaf.cursor >= leaf.size() {
                leaf.closed = true;
            }
        }
        out
    }
}

/// One round of the active loop: fold in feedback and emit the next batch.
pub fn active_partition_step(
    tree: &mut PartitionTree,
    feedback: &BTreeMap<LeafId, RegionFeedback>,
    step_budget: u64,
) -> Vec<Addr128> {
    tree.step(feedback, step_budget)
}
