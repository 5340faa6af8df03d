//! Registrable-domain extraction and blacklist matching.
//!
//! Uses a small bundled public-suffix snapshot so results do not depend on
//! network access or on the version of a system suffix list.

use std::collections::HashSet;
use std::sync::OnceLock;

const SUFFIX_SNAPSHOT: &str = include_str!("../data/public_suffixes.txt");

fn suffixes() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        SUFFIX_SNAPSHOT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("//"))
            .collect()
    })
}

/// Lowercased host of `url`, if it parses and has one.
pub fn host_from_url(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    let host = parsed.host_str()?;
    Some(host.trim_end_matches('.').to_ascii_lowercase())
}

/// Registrable domain (public suffix plus one label) of `host`.
///
/// Hosts under an unknown TLD fall back to their last two labels; IP
/// literals and single-label hosts are returned unchanged.
pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.parse::<std::net::IpAddr>().is_ok() || host.starts_with('[') {
        return host;
    }
    let labels: Vec<&str> = host.split('.').collect();
    if labels.len() < 2 {
        return host;
    }
    let set = suffixes();
    // longest matching suffix that leaves at least one label in front of it
    for start in 1..labels.len() {
        let candidate = labels[start..].join(".");
        if set.contains(candidate.as_str()) {
            return labels[start - 1..].join(".");
        }
    }
    labels[labels.len() - 2..].join(".")
}

pub fn domain_from_url(url: &str) -> Option<String> {
    host_from_url(url).map(|h| registrable_domain(&h))
}

/// Set of blacklisted domains. A host matches when it, or any parent
/// domain of it, is listed.
#[derive(Debug, Clone, Default)]
pub struct Blacklist {
    domains: HashSet<String>,
}

impl Blacklist {
    pub fn new<I, S>(domains: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            domains: domains
                .into_iter()
                .map(|d| d.as_ref().trim().trim_end_matches('.').to_ascii_lowercase())
                .filter(|d| !d.is_empty())
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn matches_host(&self, host: &str) -> bool {
        if self.domains.is_empty() {
            return false;
        }
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        let mut rest = host.as_str();
        loop {
            if self.domains.contains(rest) {
                return true;
            }
            match rest.find('.') {
                Some(i) => rest = &rest[i + 1..],
                None => return false,
            }
        }
    }
}
