//! Bloom-filter deduplication of addresses.
//!
//! Memory is `m` bits regardless of how large the address universe is.
//! The hash family is fixed (not randomly keyed) so that campaigns replay
//! bit-identically.

use std::sync::Mutex;
use std::time::Duration;

use crate::addr::Addr128;
use crate::clock::SimTime;

use super::BlockError;

pub const DEFAULT_CAPACITY: u64 = 100_000_000;
pub const DEFAULT_FP_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seen {
    Fresh,
    Duplicate,
}

#[inline]
fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

fn hash_pair(a: Addr128) -> (u64, u64) {
    let hi = (a.0 >> 64) as u64;
    let lo = a.0 as u64;
    let h1 = fmix64(lo ^ fmix64(hi ^ 0x9e37_79b9_7f4a_7c15));
    let h2 = fmix64(hi ^ fmix64(lo ^ 0xc2b2_ae3d_27d4_eb4f));
    (h1, h2 | 1)
}

#[derive(Debug, Clone)]
pub struct DedupFilter {
    words: Vec<u64>,
    m: u64,
    k: u32,
    capacity: u64,
    fp_rate: f64,
    inserted: u64,
}

impl DedupFilter {
    /// Sizes the filter for `capacity` insertions at false-positive rate
    /// `fp_rate`: m = -n ln p / (ln 2)^2 and k = (m / n) ln 2.
    pub fn new(capacity: u64, fp_rate: f64) -> Result<Self, BlockError> {
        if capacity == 0 || !(fp_rate > 0.0 && fp_rate < 1.0) {
            return Err(BlockError::InvalidFilterParams { capacity, fp_rate });
        }
        let ln2 = std::f64::consts::LN_2;
        let m = (-(capacity as f64) * fp_rate.ln() / (ln2 * ln2)).ceil().max(64.0) as u64;
        let k = ((m as f64 / capacity as f64) * ln2).round().max(1.0) as u32;
        // zero-initialised allocation: untouched pages stay unbacked
        let words = vec![0u64; m.div_ceil(64) as usize];
        Ok(DedupFilter {
            words,
            m,
            k,
            capacity,
            fp_rate,
            inserted: 0,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(DEFAULT_CAPACITY, DEFAULT_FP_RATE).expect("default parameters are valid")
    }

    pub fn bits(&self) -> u64 {
        self.m
    }

    pub fn hashes(&self) -> u32 {
        self.k
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn target_fp_rate(&self) -> f64 {
        self.fp_rate
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    fn positions(&self, a: Addr128) -> impl Iterator<Item = u64> + '_ {
        let (mut h1, mut h2) = hash_pair(a);
        let m = self.m;
        (0..self.k).map(move |i| {
            let pos = ((h1 as u128 * m as u128) >> 64) as u64;
            h1 = h1.wrapping_add(h2);
            h2 = h2.wrapping_add(i as u64 + 1);
            pos
        })
    }

    pub fn contains(&self, a: Addr128) -> bool {
        self.positions(a)
            .all(|p| self.words[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }

    /// Records `a` and reports whether it was seen before. A fresh address
    /// beyond design capacity is refused so the caller can rotate filters.
    pub fn check_and_insert(&mut self, a: Addr128) -> Result<Seen, BlockError> {
        if self.contains(a) {
            return Ok(Seen::Duplicate);
        }
        if self.inserted >= self.capacity {
            return Err(BlockError::CapacityExceeded {
                capacity: self.capacity,
            });
        }
        let positions: Vec<u64> = self.positions(a).collect();
        for p in positions {
            self.words[(p / 64) as usize] |= 1 << (p % 64);
        }
        self.inserted += 1;
        Ok(Seen::Fresh)
    }

    /// Drops all contents, keeping the sizing.
    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
        self.inserted = 0;
    }
}

/// Mutex-guarded filter for concurrent probers. Each check-and-insert is a
/// single critical section, so the operation is linearizable.
#[derive(Debug)]
pub struct SharedDedupFilter(Mutex<DedupFilter>);

impl SharedDedupFilter {
    pub fn new(filter: DedupFilter) -> Self {
        SharedDedupFilter(Mutex::new(filter))
    }

    pub fn check_and_insert(&self, a: Addr128) -> Result<Seen, BlockError> {
        self.0.lock().expect("dedup filter poisoned").check_and_insert(a)
    }

    pub fn into_inner(self) -> DedupFilter {
        self.0.into_inner().expect("dedup filter poisoned")
    }
}

/// Suppresses responders seen within a sliding time window using two
/// filters: every `window` the older one is cleared and the roles swap.
/// An address stays suppressed for at least `window` and at most twice that.
#[derive(Debug, Clone)]
pub struct RotatingFilter {
    window: Duration,
    current: DedupFilter,
    previous: DedupFilter,
    epoch_start: SimTime,
}

impl RotatingFilter {
    pub fn new(window: Duration, capacity: u64, fp_rate: f64) -> Result<Self, BlockError> {
        let current = DedupFilter::new(capacity, fp_rate)?;
        Ok(RotatingFilter {
            window,
            previous: current.clone(),
            current,
            epoch_start: SimTime::ZERO,
        })
    }

    fn rotate_to(&mut self, now: SimTime) {
        if self.window.is_zero() {
            return;
        }
        let periods = (now.since(self.epoch_start).as_nanos() / self.window.as_nanos()) as u64;
        match periods {
            0 => return,
            1 => {
                std::mem::swap(&mut self.current, &mut self.previous);
                self.current.clear();
            }
            _ => {
                self.current.clear();
                self.previous.clear();
            }
        }
        self.epoch_start =
            SimTime::from_nanos(self.epoch_start.as_nanos() + periods * self.window.as_nanos() as u64);
    }

    pub fn check_and_insert(&mut self, a: Addr128, now: SimTime) -> Result<Seen, BlockError> {
        self.rotate_to(now);
        if self.previous.contains(a) {
            return Ok(Seen::Duplicate);
        }
        match self.current.check_and_insert(a) {
            Err(BlockError::CapacityExceeded { .. }) => {
                // force a rotation rather than refusing the responder
                std::mem::swap(&mut self.current, &mut self.previous);
                self.current.clear();
                self.epoch_start = now;
                self.current.check_and_insert(a)
            }
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(i: u64) -> Addr128 {
        Addr128((0x2001_0db8_u128 << 96) | i as u128)
    }

    #[test]
    fn fresh_then_duplicate() {
        let mut f = DedupFilter::new(1000, 1e-4).unwrap();
        let a: Addr128 = "2001:db8::1".parse().unwrap();
        assert_eq!(f.check_and_insert(a).unwrap(), Seen::Fresh);
        assert_eq!(f.check_and_insert(a).unwrap(), Seen::Duplicate);
        assert_eq!(f.inserted(), 1);
    }

    #[test]
    fn sizing_formula() {
        let f = DedupFilter::new(1_000_000, 1e-4).unwrap();
        // -n ln p / ln2^2 = 19_170_116.75 (computed independently with Python)
        assert_eq!(f.bits(), 19_170_117);
        assert_eq!(f.hashes(), 13);
    }

    #[test]
    fn capacity_exceeded() {
        let mut f = DedupFilter::new(3, 1e-3).unwrap();
        for i in 0..3 {
            assert_eq!(f.check_and_insert(addr(i)).unwrap(), Seen::Fresh);
        }
        assert!(matches!(
            f.check_and_insert(addr(99)),
            Err(BlockError::CapacityExceeded { capacity: 3 })
        ));
        assert_eq!(f.check_and_insert(addr(1)).unwrap(), Seen::Duplicate);
    }

    #[test]
    fn invalid_params() {
        assert!(DedupFilter::new(0, 1e-4).is_err());
        assert!(DedupFilter::new(10, 0.0).is_err());
        assert!(DedupFilter::new(10, 1.0).is_err());
    }

    #[test]
    fn shared_filter_is_linearizable_per_address() {
        use rayon::prelude::*;
        let shared = SharedDedupFilter::new(DedupFilter::new(10_000, 1e-6).unwrap());
        let fresh = (0..8_000u64)
            .into_par_iter()
            .map(|i| shared.check_and_insert(addr(i % 1000)).unwrap())
            .filter(|s| *s == Seen::Fresh)
            .count();
        assert_eq!(fresh, 1000);
    }

    #[test]
    fn rotating_window() {
        let mut f = RotatingFilter::new(Duration::from_secs(60), 1000, 1e-6).unwrap();
        let a = addr(1);
        let t = |s: u64| SimTime::ZERO + Duration::from_secs(s);
        assert_eq!(f.check_and_insert(a, t(0)).unwrap(), Seen::Fresh);
        assert_eq!(f.check_and_insert(a, t(59)).unwrap(), Seen::Duplicate);
        // still remembered by the previous generation
        assert_eq!(f.check_and_insert(a, t(100)).unwrap(), Seen::Duplicate);
        // forgotten once both generations have turned over
        assert_eq!(f.check_and_insert(a, t(500)).unwrap(), Seen::Fresh);
    }
}
