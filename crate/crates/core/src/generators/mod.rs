//! Target generation: turn seedlists into scanlists.
//!
//! Three techniques are implemented natively (density region fill-up, a
//! per-nybble entropy model and an active hierarchical partition that learns
//! from probe feedback). Output of other tools can be imported from files.

mod density;
mod entropy;
mod import;
mod partition;

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addr::{Addr128, AddrError};
use crate::model::{SeedSource, SourceTag};

pub use density::{density_fillup_generate, DEFAULT_MIN_DENSITY};
pub use entropy::{entropy_generate, EntropyModel, MIN_ENTROPY_SEEDS};
pub use import::{import_external, parse_external};
pub use partition::{
    active_partition_step, LeafId, PartitionConfig, PartitionTree, RegionFeedback, RegionNode,
};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("entropy model needs at least {need} seeds, got {got}")]
    InsufficientSeeds { need: usize, got: usize },
    #[error("line {line}: {source}")]
    MalformedAddress {
        line: usize,
        #[source]
        source: AddrError,
    },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Technique {
    DensityFillUp,
    EntropyModel,
    ActivePartition,
    ExternalImport,
}

impl Technique {
    pub fn is_active(self) -> bool {
        self == Technique::ActivePartition
    }
}

/// One execution of a generator on one seed source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GeneratorRun {
    pub name: String,
    pub technique: Technique,
    pub seed_source: SeedSource,
    pub budget: u64,
    pub rng_seed: u64,
    pub emitted_count: u64,
}

impl GeneratorRun {
    pub fn new(name: impl Into<String>, technique: Technique, seed_source: SeedSource, budget: u64, rng_seed: u64) -> Self {
        GeneratorRun {
            name: name.into(),
            technique,
            seed_source,
            budget,
            rng_seed,
            emitted_count: 0,
        }
    }

    pub fn tag(&self) -> SourceTag {
        SourceTag::generator(self.name.clone(), self.seed_source)
    }
}

/// Generator output: candidate addresses plus the run that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scanlist {
    pub run: GeneratorRun,
    pub addresses: Vec<Addr128>,
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    address: Addr128,
    origin: &'a SourceTag,
}

impl Scanlist {
    pub fn new(mut run: GeneratorRun, addresses: Vec<Addr128>) -> Self {
        run.emitted_count = addresses.len() as u64;
        Scanlist { run, addresses }
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    /// Removes addresses present in `seeds`; generators must add value
    /// beyond their input.
    pub fn exclude(&mut self, seeds: &BTreeSet<Addr128>) {
        self.addresses.retain(|a| !seeds.contains(a));
        self.run.emitted_count = self.addresses.len() as u64;
    }

    /// Writes `<dir>/<name>.txt` and the sidecar `<name>.provenance.jsonl`.
    pub fn write(&self, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
        let stem = file_stem(&self.run.tag().to_string());
        let list_path = dir.join(format!("{stem}.txt"));
        let prov_path = dir.join(format!("{stem}.provenance.jsonl"));
        let tag = self.run.tag();
        let mut list = BufWriter::new(fs::File::create(&list_path)?);
        let mut prov = BufWriter::new(fs::File::create(&prov_path)?);
        for a in &self.addresses {
            writeln!(list, "{a}")?;
            serde_json::to_writer(&mut prov, &ProvenanceLine { address: *a, origin: &tag })?;
            prov.write_all(b"\n")?;
        }
        list.flush()?;
        prov.flush()?;
        Ok((list_path, prov_path))
    }
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn unique_seeds(seeds: &[Addr128]) -> BTreeSet<Addr128> {
    seeds.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scanlist_files() {
        let dir = tempfile::tempdir().unwrap();
        let run = GeneratorRun::new("6Graph", Technique::ExternalImport, SeedSource::DnsZoneWww, 10, 1);
        let s = Scanlist::new(run, vec!["2001:db8::1".parse().unwrap(), "2001:db8::2".parse().unwrap()]);
        assert_eq!(s.run.emitted_count, 2);
        let (list, prov) = s.write(dir.path()).unwrap();
        assert!(list.ends_with("6Graph_DNS-www.txt"));
        assert_eq!(fs::read_to_string(list).unwrap(), "2001:db8::1\n2001:db8::2\n");
        let first = fs::read_to_string(prov).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            first,
            r#"{"address":"2001:db8::1","origin":{"generator":"6Graph","seed_source":"DNS-www"}}"#
        );
    }
}
