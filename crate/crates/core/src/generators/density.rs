//! High-density region fill-up.
//!
//! Seeds are grouped by shared nybble patterns: every single wildcard
//! position, plus trailing blocks of two to four wildcard nybbles. A region
//! with at least two seeds whose density (seeds / 16^wildcards) reaches the
//! threshold is filled with its non-seed members, densest regions first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::addr::{Addr128, NYBBLES};

use super::unique_seeds;

/// One seed per final-nybble slice.
pub const DEFAULT_MIN_DENSITY: f64 = 1.0 / 16.0;

const MAX_TRAILING_WILDCARDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Region {
    pattern: Addr128,
    wildcards: Vec<usize>,
    seeds: u64,
}

impl Region {
    fn size(&self) -> u64 {
        16u64.pow(self.wildcards.len() as u32)
    }

    /// Orders by density (descending) without floating point.
    fn cmp_density(&self, other: &Region) -> Ordering {
        let lhs = self.seeds as u128 * other.size() as u128;
        let rhs = other.seeds as u128 * self.size() as u128;
        rhs.cmp(&lhs)
    }

    fn member(&self, mut index: u64) -> Addr128 {
        let mut a = self.pattern;
        for &pos in self.wildcards.iter().rev() {
            a = a.with_nybble(pos, (index % 16) as u8);
            index /= 16;
        }
        a
    }
}

fn wildcard_families() -> Vec<Vec<usize>> {
    let mut fams: Vec<Vec<usize>> = (0..NYBBLES).map(|i| vec![i]).collect();
    for w in 2..=MAX_TRAILING_WILDCARDS {
        fams.push((NYBBLES - w..NYBBLES).collect());
    }
    fams
}

fn masked(a: Addr128, wildcards: &[usize]) -> Addr128 {
    wildcards.iter().fold(a, |acc, &p| acc.with_nybble(p, 0))
}

/// Fills dense seed regions with the addresses the seeds do not cover.
///
/// Deterministic for fixed `(seeds, budget, min_density, rng_seed)`; the
/// seed only decides which members of a region are taken when the budget
/// runs out part-way through it.
pub fn density_fillup_generate(seeds: &[Addr128], budget: usize, min_density: f64, rng_seed: u64) -> Vec<Addr128> {
    let seeds = unique_seeds(seeds);
    if seeds.len() < 2 || budget == 0 {
        return Vec::new();
    }

    let mut regions = Vec::new();
    for wildcards in wildcard_families() {
        let mut groups: BTreeMap<Addr128, u64> = BTreeMap::new();
        for &s in &seeds {
            *groups.entry(masked(s, &wildcards)).or_default() += 1;
        }
        for (pattern, count) in groups {
            let region = Region {
                pattern,
                wildcards: wildcards.clone(),
                seeds: count,
            };
            if count >= 2 && count as f64 / region.size() as f64 >= min_density {
                regions.push(region);
            }
        }
    }
    regions.sort_by(|a, b| {
        a.cmp_density(b)
            .then(a.size().cmp(&b.size()))
            .then(a.pattern.cmp(&b.pattern))
            .then(a.wildcards.cmp(&b.wildcards))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut emitted = BTreeSet::new();
    let mut out = Vec::new();
    for region in &regions {
        let remaining = budget - out.len();
        if remaining == 0 {
            break;
        }
        let fresh: Vec<Addr128> = (0..region.size())
            .map(|i| region.member(i))
            .filter(|a| !seeds.contains(a) && !emitted.contains(a))
            .collect();
        let take: Vec<Addr128> = if fresh.len() <= remaining {
            fresh
        } else {
            let mut picked: Vec<Addr128> = fresh.choose_multiple(&mut rng, remaining).copied().collect();
            picked.sort_unstable();
            picked
        };
        for a in take {
            emitted.insert(a);
            out.push(a);
        }
    }
    out
}
