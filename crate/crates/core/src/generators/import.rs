use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::addr::parse_address;
use crate::model::SeedSource;

use super::{GenError, GeneratorRun, Scanlist, Technique};

/// Parses generator output produced out-of-band (one address per line,
/// `#` comments allowed). Duplicates are dropped, first occurrence wins.
pub fn parse_external(text: &str, generator_name: &str, seed_source: SeedSource) -> Result<Scanlist, GenError> {
    let mut seen = HashSet::new();
    let mut addresses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let a = parse_address(line).map_err(|source| GenError::MalformedAddress { line: i + 1, source })?;
        if seen.insert(a) {
            addresses.push(a);
        }
    }
    let run = GeneratorRun::new(generator_name, Technique::ExternalImport, seed_source, addresses.len() as u64, 0);
    Ok(Scanlist::new(run, addresses))
}

pub fn import_external(path: &Path, generator_name: &str, seed_source: SeedSource) -> Result<Scanlist, GenError> {
    let text = fs::read_to_string(path).map_err(|source| GenError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_external(&text, generator_name, seed_source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SourceTag;

    #[test]
    fn dedups_and_tags() {
        let s = parse_external("2001:db8::1\n2001:db8::2\n2001:db8::1\n", "6GAN", SeedSource::TumHitlist).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.run.tag(), SourceTag::generator("6GAN", SeedSource::TumHitlist));
        assert_eq!(s.run.technique, Technique::ExternalImport);
        assert_eq!(s.run.emitted_count, 2);
    }

    #[test]
    fn reports_malformed_line() {
        let mut text = String::new();
        for i in 1..=6 {
            text.push_str(&format!("2001:db8::{i}\n"));
        }
        text.push_str("2001:db8::zz\n");
        let err = parse_external(&text, "6VecLM", SeedSource::V4Derived).unwrap_err();
        assert!(matches!(err, GenError::MalformedAddress { line: 7, .. }));
    }

    #[test]
    fn reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        fs::write(&p, "# 6Tree output\n2001:db8::5\n").unwrap();
        assert_eq!(import_external(&p, "6Tree", SeedSource::DnsZone).unwrap().len(), 1);
        assert!(import_external(&dir.path().join("missing"), "6Tree", SeedSource::DnsZone).is_err());
    }
}
