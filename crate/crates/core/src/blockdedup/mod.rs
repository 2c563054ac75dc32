//! Blocklist filtering and at-scale deduplication of candidate addresses.

mod bloom;
mod trie;

use thiserror::Error;

use crate::addr::AddrError;

pub use bloom::{
    DedupFilter, RotatingFilter, Seen, SharedDedupFilter, DEFAULT_CAPACITY, DEFAULT_FP_RATE,
};
pub use trie::{is_blocked, CidrSet, PrefixTrie};

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: AddrError,
    },
    #[error("dedup filter reached its design capacity of {capacity}")]
    CapacityExceeded { capacity: u64 },
    #[error("invalid filter parameters: capacity {capacity}, fp rate {fp_rate}")]
    InvalidFilterParams { capacity: u64, fp_rate: f64 },
}

/// Convenience alias for `check_and_insert` on a plain filter.
pub fn check_and_insert(filter: &mut DedupFilter, a: crate::addr::Addr128) -> Result<Seen, BlockError> {
    filter.check_and_insert(a)
}
