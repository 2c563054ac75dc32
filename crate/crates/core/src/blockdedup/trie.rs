//! Path-compressed binary radix tree keyed by 128-bit prefixes.

use std::fs;
use std::path::Path;

use crate::addr::{Addr128, Prefix};

use super::BlockError;

#[derive(Debug, Clone)]
struct Node<V> {
    prefix: Prefix,
    value: Option<V>,
    children: [Option<Box<Node<V>>>; 2],
}

impl<V> Node<V> {
    fn new(prefix: Prefix, value: Option<V>) -> Self {
        Node {
            prefix,
            value,
            children: [None, None],
        }
    }

    fn count(&self) -> usize {
        self.value.is_some() as usize
            + self
                .children
                .iter()
                .flatten()
                .map(|c| c.count())
                .sum::<usize>()
    }
}

fn common_len(a: Addr128, b: Addr128) -> u8 {
    (a.0 ^ b.0).leading_zeros().min(128) as u8
}

/// A map from prefixes to values with longest-prefix-match lookup.
#[derive(Debug, Clone)]
pub struct PrefixTrie<V> {
    root: Node<V>,
    len: usize,
}

impl<V> Default for PrefixTrie<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V> PrefixTrie<V> {
    pub fn new() -> Self {
        PrefixTrie {
            root: Node::new(Prefix::ALL, None),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Inserts or replaces the value stored at exactly `prefix`.
    pub fn insert(&mut self, prefix: Prefix, value: V) -> Option<V> {
        let old = Self::insert_at(&mut self.root, prefix, value);
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    fn insert_at(node: &mut Node<V>, p: Prefix, v: V) -> Option<V> {
        if node.prefix == p {
            return node.value.replace(v);
        }
        let bit = p.base().bit(node.prefix.len()) as usize;
        let slot = &mut node.children[bit];
        let Some(child) = slot else {
            *slot = Some(Box::new(Node::new(p, Some(v))));
            return None;
        };
        if child.prefix.covers(&p) {
            return Self::insert_at(child, p, v);
        }
        let old_child = slot.take().expect("checked above");
        let replacement = if p.covers(&old_child.prefix) {
            let mut n = Node::new(p, Some(v));
            let cb = old_child.prefix.base().bit(p.len()) as usize;
            n.children[cb] = Some(old_child);
            n
        } else {
            let common = common_len(old_child.prefix.base(), p.base())
                .min(old_child.prefix.len())
                .min(p.len());
            let mut mid = Node::new(Prefix::truncating(p.base(), common), None);
            let cb = old_child.prefix.base().bit(common) as usize;
            let pb = p.base().bit(common) as usize;
            debug_assert_ne!(cb, pb);
            mid.children[cb] = Some(old_child);
            mid.children[pb] = Some(Box::new(Node::new(p, Some(v))));
            mid
        };
        *slot = Some(Box::new(replacement));
        None
    }

    fn find_mut(&mut self, p: &Prefix) -> Option<&mut Node<V>> {
        let mut node = &mut self.root;
        loop {
            if node.prefix == *p {
                return Some(node);
            }
            if !node.prefix.covers(p) || node.prefix.len() == 128 {
                return None;
            }
            let bit = p.base().bit(node.prefix.len()) as usize;
            node = node.children[bit].as_deref_mut()?;
        }
    }

    pub fn get(&self, p: &Prefix) -> Option<&V> {
        let mut node = &self.root;
        loop {
            if node.prefix == *p {
                return node.value.as_ref();
            }
            if !node.prefix.covers(p) || node.prefix.len() == 128 {
                return None;
            }
            node = node.children[p.base().bit(node.prefix.len()) as usize].as_deref()?;
        }
    }

    /// The most specific stored prefix containing `a`.
    pub fn longest_match(&self, a: Addr128) -> Option<(Prefix, &V)> {
        let mut best = None;
        let mut node = &self.root;
        loop {
            if !node.prefix.contains(a) {
                break;
            }
            if let Some(v) = &node.value {
                best = Some((node.prefix, v));
            }
            if node.prefix.len() == 128 {
                break;
            }
            match node.children[a.bit(node.prefix.len()) as usize].as_deref() {
                Some(c) => node = c,
                None => break,
            }
        }
        best
    }

    /// The least specific stored prefix covering `p` (including `p` itself).
    pub fn shortest_cover(&self, p: &Prefix) -> Option<(Prefix, &V)> {
        let mut node = &self.root;
        loop {
            if !node.prefix.covers(p) {
                return None;
            }
            if let Some(v) = &node.value {
                return Some((node.prefix, v));
            }
            if node.prefix.len() == 128 || node.prefix == *p {
                return None;
            }
            node = node.children[p.base().bit(node.prefix.len()) as usize].as_deref()?;
        }
    }

    /// Drops every entry strictly below `p`. Returns how many were removed.
    fn prune_below(&mut self, p: &Prefix) -> usize {
        let Some(node) = self.find_mut(p) else {
            return 0;
        };
        let removed: usize = node
            .children
            .iter_mut()
            .filter_map(Option::take)
            .map(|c| c.count())
            .sum();
        self.len -= removed;
        removed
    }

    /// All entries in address order (parents before children).
    pub fn iter(&self) -> Vec<(Prefix, &V)> {
        fn walk<'a, V>(n: &'a Node<V>, out: &mut Vec<(Prefix, &'a V)>) {
            if let Some(v) = &n.value {
                out.push((n.prefix, v));
            }
            for c in n.children.iter().flatten() {
                walk(c, out);
            }
        }
        let mut out = Vec::with_capacity(self.len);
        walk(&self.root, &mut out);
        out
    }
}

/// A set of prefixes answering "is this address inside any of them".
/// Immutable once loaded, so it can be shared freely between probers.
#[derive(Debug, Clone, Default)]
pub struct CidrSet {
    trie: PrefixTrie<()>,
}

impl CidrSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a prefix. A prefix already covered by a stored one is ignored;
    /// a covering prefix replaces everything it covers. Returns whether the
    /// set changed.
    pub fn insert(&mut self, p: Prefix) -> bool {
        if self.trie.shortest_cover(&p).is_some() {
            return false;
        }
        self.trie.insert(p, ());
        self.trie.prune_below(&p);
        true
    }

    pub fn contains(&self, a: Addr128) -> bool {
        self.trie.longest_match(a).is_some()
    }

    /// The stored prefix containing `a`, if any.
    pub fn matching(&self, a: Addr128) -> Option<Prefix> {
        self.trie.longest_match(a).map(|(p, _)| p)
    }

    pub fn len(&self) -> usize {
        self.trie.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    pub fn prefixes(&self) -> Vec<Prefix> {
        self.trie.iter().into_iter().map(|(p, _)| p).collect()
    }

    /// Loads one CIDR per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self, BlockError> {
        let text = fs::read_to_string(path).map_err(|source| BlockError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, BlockError> {
        let mut set = CidrSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let p: Prefix = line.parse().map_err(|source| BlockError::Malformed {
                line: i + 1,
                source,
            })?;
            set.insert(p);
        }
        Ok(set)
    }
}

impl FromIterator<Prefix> for CidrSet {
    fn from_iter<T: IntoIterator<Item = Prefix>>(iter: T) -> Self {
        let mut set = CidrSet::new();
        for p in iter {
            set.insert(p);
        }
        set
    }
}

/// True iff `a` falls inside any blocklisted prefix.
pub fn is_blocked(set: &CidrSet, a: Addr128) -> bool {
    set.contains(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    fn a(s: &str) -> Addr128 {
        s.parse().unwrap()
    }

    #[test]
    fn blocklist_examples() {
        let set: CidrSet = [p("2001:db8::/32")].into_iter().collect();
        assert!(is_blocked(&set, a("2001:db8::5")));
        assert!(!is_blocked(&set, a("2001:db9::5")));
        assert!(!is_blocked(&CidrSet::new(), a("2001:db8::5")));
    }

    #[test]
    fn covering_prefix_subsumes() {
        let mut set = CidrSet::new();
        assert!(set.insert(p("2001:db8:1::/48")));
        assert!(set.insert(p("2001:db8:2::/48")));
        assert!(set.insert(p("2001:db9::/32")));
        assert_eq!(set.len(), 3);
        assert!(set.insert(p("2001:db8::/32")));
        assert_eq!(set.prefixes(), vec![p("2001:db8::/32"), p("2001:db9::/32")]);
        assert!(!set.insert(p("2001:db8:5::/64")));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn longest_match_prefers_specific() {
        let mut t = PrefixTrie::new();
        t.insert(p("2001:db8::/32"), 64500);
        t.insert(p("2001:db8:aa::/48"), 64501);
        t.insert(p("::/0"), 1);
        assert_eq!(t.longest_match(a("2001:db8:aa::1")).map(|(_, v)| *v), Some(64501));
        assert_eq!(t.longest_match(a("2001:db8:ab::1")).map(|(_, v)| *v), Some(64500));
        assert_eq!(t.longest_match(a("3000::1")).map(|(_, v)| *v), Some(1));
        assert_eq!(t.get(&p("2001:db8::/32")), Some(&64500));
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn parse_file_format() {
        let set = CidrSet::parse("# blocklist\n2001:db8::/32\n\n2001:db9::1 # host\n").unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.contains(a("2001:db9::1")));
        assert!(!set.contains(a("2001:db9::2")));
        let err = CidrSet::parse("2001:db8::/32\nnot-a-prefix\n").unwrap_err();
        assert!(matches!(err, BlockError::Malformed { line: 2, .. }));
    }

    fn clustered_prefix() -> impl Strategy<Value = Prefix> {
        // A handful of bases so that prefixes nest and overlap often.
        (0u128..6, any::<u64>(), 0u8..=128).prop_map(|(hi, lo, len)| {
            Prefix::truncating(Addr128((0x2001_0db8 << 96) | (hi << 80) | lo as u128), len)
        })
    }

    fn clustered_addr() -> impl Strategy<Value = Addr128> {
        (0u128..6, any::<u64>()).prop_map(|(hi, lo)| Addr128((0x2001_0db8 << 96) | (hi << 80) | lo as u128))
    }

    proptest! {
        #[test]
        fn lookup_matches_linear_scan(
            prefixes in prop::collection::vec(clustered_prefix(), 0..40),
            probes in prop::collection::vec(clustered_addr(), 1..60),
        ) {
            let set: CidrSet = prefixes.iter().copied().collect();
            for probe in probes.iter().copied().chain(prefixes.iter().map(|p| p.base())) {
                let linear = prefixes.iter().any(|p| p.contains(probe));
                prop_assert_eq!(set.contains(probe), linear);
            }
            // No stored prefix is covered by another one.
            let stored = set.prefixes();
            for (i, x) in stored.iter().enumerate() {
                for (j, y) in stored.iter().enumerate() {
                    prop_assert!(i == j || !x.covers(y));
                }
            }
        }

        #[test]
        fn trie_longest_match_matches_linear_scan(
            prefixes in prop::collection::vec(clustered_prefix(), 0..40),
            probes in prop::collection::vec(clustered_addr(), 1..60),
        ) {
            let mut trie = PrefixTrie::new();
            for (i, p) in prefixes.iter().enumerate() {
                trie.insert(*p, i);
            }
            for probe in probes {
                let linear = prefixes.iter().filter(|p| p.contains(probe)).map(|p| p.len()).max();
                prop_assert_eq!(trie.longest_match(probe).map(|(p, _)| p.len()), linear);
            }
        }
    }
}
