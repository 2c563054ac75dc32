use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aliaser::AliasConfig;
use crate::generators::Technique;
use crate::model::{ProtocolSpec, SeedSource};
use crate::prober::{PolitenessPolicy, ProberConfig};

use super::ConfigError;

/// One seed input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedInput {
    /// One address per line, optionally with an alias prefix list.
    Hitlist {
        source: SeedSource,
        path: PathBuf,
        #[serde(default)]
        aliases: Option<PathBuf>,
    },
    /// Zone-file domain names, resolved for AAAA records.
    Domains {
        path: PathBuf,
        #[serde(default)]
        include_www: bool,
    },
    /// JSON-lines IPv4 scan records whose names are resolved for AAAA.
    V4Records { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub name: String,
    pub technique: Technique,
    pub seed_source: SeedSource,
    #[serde(default)]
    pub budget: u64,
    /// Defaults to the campaign seed.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    #[serde(default = "default_min_density")]
    pub min_density: f64,
    /// Scanlist file for external imports.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Probe/feedback rounds for the active partition generator.
    #[serde(default = "default_rounds")]
    pub rounds: u32,
}

fn default_min_density() -> f64 {
    0.1
}

fn default_rounds() -> u32 {
    4
}

fn default_coverage() -> f64 {
    0.9
}

fn default_fp_rate() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingInputs {
    /// `prefix asn` lines.
    pub snapshot: PathBuf,
    /// JSON map from AS number to type label.
    #[serde(default)]
    pub types: Option<PathBuf>,
    /// AS numbers hosting IPv4 deployments, one per line.
    #[serde(default)]
    pub v4_asns: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "ProtocolSpec::all")]
    pub protocols: Vec<ProtocolSpec>,
    pub seeds: Vec<SeedInput>,
    /// Down-sample the merged seedlist to this many addresses.
    #[serde(default)]
    pub seed_sample: Option<usize>,
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub politeness: PolitenessPolicy,
    #[serde(default)]
    pub prober: ProberConfig,
    #[serde(default)]
    pub blocklist: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Universe spec to probe in-process; absent means real sockets.
    #[serde(default)]
    pub harness: Option<PathBuf>,
    #[serde(default)]
    pub alias: AliasConfig,
    #[serde(default)]
    pub guideline_profile: Option<PathBuf>,
    #[serde(default)]
    pub routing: Option<RoutingInputs>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_coverage")]
    pub coverage_target: f64,
    #[serde(default = "default_fp_rate")]
    pub dedup_fp_rate: f64,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl CampaignConfig {
    /// Parses a config; relative paths are taken relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: CampaignConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    fn rebase(&mut self, base: &Path) {
        for s in &mut self.seeds {
            match s {
                SeedInput::Hitlist { path, aliases, .. } => {
                    rebase(base, path);
                    if let Some(a) = aliases {
                        rebase(base, a);
                    }
                }
                SeedInput::Domains { path, .. } | SeedInput::V4Records { path } => rebase(base, path),
            }
        }
        for g in &mut self.generators {
            if let Some(p) = &mut g.path {
                rebase(base, p);
            }
        }
        for p in [&mut self.blocklist, &mut self.harness, &mut self.guideline_profile].into_iter().flatten() {
            rebase(base, p);
        }
        if let Some(r) = &mut self.routing {
            rebase(base, &mut r.snapshot);
            for p in [&mut r.types, &mut r.v4_asns].into_iter().flatten() {
                rebase(base, p);
            }
        }
        rebase(base, &mut self.output_dir);
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.seeds.is_empty() {
            return fail("at least one seed source is required".into());
        }
        if self.protocols.is_empty() {
            return fail("no protocols to scan".into());
        }
        let mut inputs: Vec<&Path> = Vec::new();
        for s in &self.seeds {
            match s {
                SeedInput::Hitlist { path, aliases, .. } => {
                    inputs.push(path);
                    inputs.extend(aliases.as_deref());
                }
                SeedInput::Domains { path, .. } | SeedInput::V4Records { path } => inputs.push(path),
            }
        }
        inputs.extend(self.blocklist.as_deref());
        inputs.extend(self.harness.as_deref());
        inputs.extend(self.guideline_profile.as_deref());
        if let Some(r) = &self.routing {
            inputs.push(&r.snapshot);
            inputs.extend(r.types.as_deref());
            inputs.extend(r.v4_asns.as_deref());
        }
        for g in &self.generators {
            match (g.technique, &g.path) {
                (Technique::ExternalImport, Some(p)) => inputs.push(p),
                (Technique::ExternalImport, None) => return fail(format!("generator {}: import needs a path", g.name)),
                _ => {}
            }
            if g.technique == Technique::ActivePartition && g.rounds == 0 {
                return fail(format!("generator {}: rounds must be positive", g.name));
            }
            if !(g.min_density > 0.0 && g.min_density <= 1.0) {
                return fail(format!("generator {}: min_density outside (0, 1]", g.name));
            }
        }
        for p in inputs {
            if !p.is_file() {
                return fail(format!("{}: no such file", p.display()));
            }
        }
        let mut names = BTreeSet::new();
        for g in &self.generators {
            if !names.insert((&g.name, g.seed_source)) {
                return fail(format!("generator {} on {} listed twice", g.name, g.seed_source));
            }
        }
        self.politeness.validate().map_err(ConfigError)?;
        self.alias.validate().map_err(|e| ConfigError(format!("alias: {e}")))?;
        if !(self.coverage_target > 0.0 && self.coverage_target <= 1.0) {
            return fail("coverage_target outside (0, 1]".into());
        }
        if !(self.dedup_fp_rate > 0.0 && self.dedup_fp_rate < 1.0) {
            return fail("dedup_fp_rate outside (0, 1)".into());
        }
        Ok(())
    }

    pub fn generator_seed(&self, g: &GeneratorSpec) -> u64 {
        g.rng_seed.unwrap_or(self.rng_seed)
    }
}
