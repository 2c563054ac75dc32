//! Per-nybble entropy model.
//!
//! Each of the 32 nybble positions gets its own empirical value
//! distribution and positions are sampled independently. This is the
//! independence simplification of the Bayesian-network family of generators.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::addr::{Addr128, NYBBLES};

use super::{unique_seeds, GenError};

pub const MIN_ENTROPY_SEEDS: usize = 32;

#[derive(Debug, Clone)]
pub struct EntropyModel {
    counts: [[u64; 16]; NYBBLES],
    dists: Vec<WeightedIndex<u64>>,
}

impl EntropyModel {
    /// Fits the model to `seeds`, counting repeated entries with their
    /// multiplicity.
    pub fn fit(seeds: &[Addr128]) -> Result<Self, GenError> {
        if seeds.len() < MIN_ENTROPY_SEEDS {
            return Err(GenError::InsufficientSeeds {
                need: MIN_ENTROPY_SEEDS,
                got: seeds.len(),
            });
        }
        let mut counts = [[0u64; 16]; NYBBLES];
        for s in seeds {
            for (pos, n) in s.nybbles().iter().enumerate() {
                counts[pos][*n as usize] += 1;
            }
        }
        let dists = counts
            .iter()
            .map(|c| WeightedIndex::new(c).expect("every position has mass"))
            .collect();
        Ok(EntropyModel { counts, dists })
    }

    pub fn counts(&self, position: usize) -> &[u64; 16] {
        &self.counts[position]
    }

    /// Shannon entropy (bits) of one position.
    pub fn entropy(&self, position: usize) -> f64 {
        let c = &self.counts[position];
        let total: u64 = c.iter().sum();
        c.iter()
            .filter(|&&n| n > 0)
            .map(|&n| {
                let p = n as f64 / total as f64;
                -p * p.log2()
            })
            .sum()
    }

    /// Number of distinct addresses the model can emit.
    pub fn support_size(&self) -> u128 {
        self.counts.iter().fold(1u128, |acc, c| {
            acc.saturating_mul(c.iter().filter(|&&n| n > 0).count() as u128)
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Addr128 {
        let mut nyb = [0u8; NYBBLES];
        for (pos, d) in self.dists.iter().enumerate() {
            nyb[pos] = d.sample(rng) as u8;
        }
        Addr128::from_nybbles(&nyb)
    }
}

/// Samples up to `budget` distinct non-seed addresses from a model fitted
/// to `seeds`.
pub fn entropy_generate(seeds: &[Addr128], budget: usize, rng_seed: u64) -> Result<Vec<Addr128>, GenError> {
    let model = EntropyModel::fit(seeds)?;
    let exclude = unique_seeds(seeds);
    let reachable = model.support_size().saturating_sub(exclude.len() as u128);
    let target = (budget as u128).min(reachable) as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    let max_attempts = target.saturating_mul(100).saturating_add(10_000);
    let mut attempts = 0;
    while out.len() < target && attempts < max_attempts {
        attempts += 1;
        let a = model.sample(&mut rng);
        if !exclude.contains(&a) && seen.insert(a) {
            out.push(a);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 0.99 quantile of chi-square with 15 degrees of freedom.
    const CHI2_15_P01: f64 = 30.577_914_166_892_49;

    fn skewed_seeds() -> (Addr128, Vec<Addr128>, [u64; 16]) {
        let base: Addr128 = "2001:db8:aa:bb:cc:dd:ee:f0".parse().unwrap();
        let mut hist = [0u64; 16];
        let mut seeds = Vec::new();
        for v in 0..16u8 {
            let copies = 2 + (v as u64 % 3);
            hist[v as usize] = copies;
            for _ in 0..copies {
                seeds.push(base.with_nybble(31, v));
            }
        }
        (base, seeds, hist)
    }

    #[test]
    fn last_nybble_distribution_matches_empirical() {
        let (base, seeds, hist) = skewed_seeds();
        let total: u64 = hist.iter().sum();
        assert_eq!(total, 47);
        let model = EntropyModel::fit(&seeds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let mut observed = [0u64; 16];
        for _ in 0..draws {
            let s = model.sample(&mut rng);
            assert_eq!(s.value() >> 4, base.value() >> 4, "fixed nybbles must be preserved");
            observed[s.nybble(31) as usize] += 1;
        }
        let chi2: f64 = (0..16)
            .map(|v| {
                let expected = draws as f64 * hist[v] as f64 / total as f64;
                (observed[v] as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < CHI2_15_P01, "chi-square {chi2} exceeds critical value");
    }

    #[test]
    fn generation_is_bounded_and_deterministic() {
        let seeds: Vec<Addr128> = (0..64u128)
            .map(|i| Addr128((0x2001_0db8 << 96) | ((i % 8) << 16) | (i * 7 % 64)))
            .collect();
        let out = entropy_generate(&seeds, 50, 5).unwrap();
        assert!(out.len() <= 50);
        assert_eq!(out.len(), 50);
        assert_eq!(out, entropy_generate(&seeds, 50, 5).unwrap());
        assert_ne!(out, entropy_generate(&seeds, 50, 6).unwrap());
        let unique: BTreeSet<_> = out.iter().collect();
        assert_eq!(unique.len(), out.len());
        assert!(out.iter().all(|a| !seeds.contains(a)));
    }

    #[test]
    fn exhausts_small_support() {
        let (_, seeds, _) = skewed_seeds();
        // support is exactly the 16 seed addresses: nothing new to emit
        assert_eq!(EntropyModel::fit(&seeds).unwrap().support_size(), 16);
        assert!(entropy_generate(&seeds, 100, 1).unwrap().is_empty());
    }

    #[test]
    fn needs_enough_seeds() {
        let seeds: Vec<Addr128> = (0..31u128).map(Addr128).collect();
        assert!(matches!(
            entropy_generate(&seeds, 10, 1),
            Err(GenError::InsufficientSeeds { need: 32, got: 31 })
        ));
    }
}
