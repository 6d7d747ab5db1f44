//! Per-package tag lists and release-asset lists.
//!
//! A [`RegistrySnapshot`] is immutable once built. It comes either from a
//! fixture file or from the GitHub API (see [`live`]), and both routes
//! serialize to the same JSON layout:
//!
//! ```json
//! { "owner/repo": { "tags": ["v1.0", "v1.1"], "release_asset_urls": ["https://github.com/..."] } }
//! ```
//!
//! Tag order in the file is authoritative: index 0 is the oldest tag.

pub mod live;
pub mod order;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::pkgid::{match_github_url, PackageIdentity, UrlPattern};

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("package {0} is not in the registry snapshot")]
    UnknownPackage(PackageIdentity),
    #[error("tag {tag:?} is not in the tag list of {identity}")]
    UnknownTag {
        identity: PackageIdentity,
        tag: String,
    },
    #[error("registry fixture {path}: key {key:?}: {message}")]
    Fixture {
        path: PathBuf,
        key: String,
        message: String,
    },
    #[error("registry fixture {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Tags and release assets of one package.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageEntry {
    tags: Vec<String>,
    #[serde(default)]
    release_asset_urls: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fetched_at: Option<DateTime<Utc>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    assets: HashSet<(String, String)>,
}

impl PartialEq for PackageEntry {
    fn eq(&self, other: &Self) -> bool {
        self.tags == other.tags
            && self.release_asset_urls == other.release_asset_urls
            && self.fetched_at == other.fetched_at
    }
}

impl Eq for PackageEntry {}

impl PackageEntry {
    /// Builds an entry; fails on a duplicate tag.
    pub fn new(
        tags: Vec<String>,
        release_asset_urls: BTreeSet<String>,
        fetched_at: Option<DateTime<Utc>>,
    ) -> Result<Self, String> {
        let mut entry = Self {
            tags,
            release_asset_urls,
            fetched_at,
            index: HashMap::new(),
            assets: HashSet::new(),
        };
        entry.build_indexes()?;
        Ok(entry)
    }

    fn build_indexes(&mut self) -> Result<(), String> {
        self.index.clear();
        for (i, tag) in self.tags.iter().enumerate() {
            if tag.is_empty() {
                return Err("empty tag".to_string());
            }
            if self.index.insert(tag.clone(), i).is_some() {
                return Err(format!("duplicate tag {tag:?}"));
            }
        }
        self.assets = self
            .release_asset_urls
            .iter()
            .filter_map(|u| match_github_url(u))
            .filter(|r| r.pattern == UrlPattern::Release)
            .filter_map(|r| Some((r.tag, r.asset_file?)))
            .collect();
        Ok(())
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn release_asset_urls(&self) -> &BTreeSet<String> {
        &self.release_asset_urls
    }

    pub fn fetched_at(&self) -> Option<DateTime<Utc>> {
        self.fetched_at
    }

    /// Position of `tag` in the oldest-to-newest tag list.
    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn has_release_asset(&self, tag: &str, file: &str) -> bool {
        self.assets.contains(&(tag.to_string(), file.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegistrySnapshot {
    packages: BTreeMap<PackageIdentity, PackageEntry>,
}

impl RegistrySnapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, identity: PackageIdentity, entry: PackageEntry) {
        self.packages.insert(identity, entry);
    }

    pub fn get(&self, identity: &PackageIdentity) -> Option<&PackageEntry> {
        self.packages.get(identity)
    }

    pub fn packages(&self) -> impl Iterator<Item = (&PackageIdentity, &PackageEntry)> {
        self.packages.iter()
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    pub fn tag_index(&self, identity: &PackageIdentity, tag: &str) -> Result<usize, RegistryError> {
        let entry = self
            .get(identity)
            .ok_or_else(|| RegistryError::UnknownPackage(identity.clone()))?;
        entry
            .tag_index(tag)
            .ok_or_else(|| RegistryError::UnknownTag {
                identity: identity.clone(),
                tag: tag.to_string(),
            })
    }

    /// Restricts the snapshot to the given identities.
    pub fn subset<'a>(&self, identities: impl IntoIterator<Item = &'a PackageIdentity>) -> Self {
        let packages = identities
            .into_iter()
            .filter_map(|id| Some((id.clone(), self.packages.get(id)?.clone())))
            .collect();
        Self { packages }
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, &PackageEntry> = self
            .packages
            .iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mut out = serde_json::to_string_pretty(&map).expect("registry serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, RegistryError> {
        let raw: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|source| RegistryError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let fixture_err = |key: &str, message: String| RegistryError::Fixture {
            path: path.to_path_buf(),
            key: key.to_string(),
            message,
        };
        let mut packages = BTreeMap::new();
        for (key, value) in raw {
            let identity: PackageIdentity = key
                .parse()
                .map_err(|e: crate::pkgid::IdentityParseError| fixture_err(&key, e.to_string()))?;
            let mut entry: PackageEntry =
                serde_json::from_value(value).map_err(|e| fixture_err(&key, e.to_string()))?;
            entry.build_indexes().map_err(|m| fixture_err(&key, m))?;
            if packages.insert(identity, entry).is_some() {
                return Err(fixture_err(
                    &key,
                    "identity listed twice (names are case-insensitive)".into(),
                ));
            }
        }
        Ok(Self { packages })
    }
}

/// Loads a registry fixture file.
pub fn load_fixture(path: &Path) -> Result<RegistrySnapshot, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RegistrySnapshot::from_json(&text, path)
}
