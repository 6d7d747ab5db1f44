//! GitHub-hosted package recognition.
//!
//! Two URL shapes identify a package and a tag:
//!
//! * release assets: `https://github.com/OWNER/REPO/releases/download/TAG/FILE`
//! * source archives: `https://github.com/OWNER/REPO/archive/refs/tags/TAG.tar.gz`
//!   or `https://github.com/OWNER/REPO/archive/TAG.zip` (either suffix on both)

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::registry::{RegistryError, RegistrySnapshot};
use crate::span::{Diagnostic, SourceSpan};

/// A GitHub repository that distributes a package. Names are lowercased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackageIdentity {
    owner: String,
    repo: String,
}

impl PackageIdentity {
    pub fn new(owner: &str, repo: &str) -> Option<Self> {
        if owner.is_empty() || repo.is_empty() || owner.contains('/') || repo.contains('/') {
            return None;
        }
        Some(Self {
            owner: owner.to_lowercase(),
            repo: repo.to_lowercase(),
        })
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn repo(&self) -> &str {
        &self.repo
    }
}

impl fmt::Display for PackageIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.owner, self.repo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected OWNER/REPO, got {0:?}")]
pub struct IdentityParseError(pub String);

impl FromStr for PackageIdentity {
    type Err = IdentityParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (owner, repo) = s
            .split_once('/')
            .ok_or_else(|| IdentityParseError(s.to_string()))?;
        Self::new(owner, repo).ok_or_else(|| IdentityParseError(s.to_string()))
    }
}

impl Serialize for PackageIdentity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PackageIdentity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrlPattern {
    Release,
    Archive,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PackageRef {
    pub identity: PackageIdentity,
    pub tag: String,
    pub pattern: UrlPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_file: Option<String>,
    pub url: String,
}

/// A match together with where its pieces sit in the original URL string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrlMatch {
    pub package: PackageRef,
    /// Byte range of the (still encoded) tag in the URL.
    pub tag_range: Range<usize>,
    /// Byte range of the asset file name (release pattern only).
    pub asset_range: Option<Range<usize>>,
    pub diagnostics: Vec<String>,
}

/// A validated package occurrence inside one Dockerfile version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PinnedPackage {
    #[serde(rename = "ref")]
    pub package: PackageRef,
    pub location: SourceSpan,
    pub dockerfile: String,
    pub commit: String,
}

pub fn match_github_url(url: &str) -> Option<PackageRef> {
    match_github_url_detailed(url).map(|m| m.package)
}

pub fn match_github_url_detailed(url: &str) -> Option<UrlMatch> {
    let scheme_len = if url.len() >= 8 && url[..8].eq_ignore_ascii_case("https://") {
        8
    } else if url.len() >= 7 && url[..7].eq_ignore_ascii_case("http://") {
        7
    } else {
        return None;
    };
    let rest = &url[scheme_len..];
    let host_len = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    if !rest[..host_len].eq_ignore_ascii_case("github.com") {
        return None;
    }
    let path_start = scheme_len + host_len;
    let mut diagnostics = Vec::new();
    let path_end = url[path_start..]
        .find(['?', '#'])
        .map_or(url.len(), |i| path_start + i);
    if path_end < url.len() {
        diagnostics.push(format!(
            "stripped query or fragment {:?} before matching",
            &url[path_end..]
        ));
    }
    let path = &url[path_start..path_end];
    let path = path.strip_prefix('/')?;
    // (decoded text, byte range in url)
    let mut segments = Vec::new();
    let mut offset = path_start + 1;
    for raw in path.split('/') {
        let decoded = percent_decode_str(raw).decode_utf8().ok()?.into_owned();
        segments.push((decoded, offset..offset + raw.len()));
        offset += raw.len() + 1;
    }
    if segments.iter().any(|(s, _)| s.is_empty()) || segments.len() < 4 {
        return None;
    }
    let identity = PackageIdentity::new(&segments[0].0, &segments[1].0)?;
    let url_no_query = url[..path_end].to_string();
    let kind: Vec<&str> = segments[2..].iter().map(|(s, _)| s.as_str()).collect();

    let (tag, tag_range, pattern, asset) = match kind.as_slice() {
        ["releases", "download", tag, file] => (
            tag.to_string(),
            segments[4].1.clone(),
            UrlPattern::Release,
            Some((file.to_string(), segments[5].1.clone())),
        ),
        ["archive", "refs", "tags", rest @ ..] if !rest.is_empty() => {
            let joined = rest.join("/");
            let tag = strip_archive_suffix(&joined)?;
            let start = segments[5].1.start;
            let end = segments.last().expect("nonempty").1.end;
            let raw_len = end - start;
            let suffix_len = joined.len() - tag.len();
            (
                tag.to_string(),
                start..start + raw_len - suffix_len,
                UrlPattern::Archive,
                None,
            )
        }
        ["archive", file] if *file != "refs" => {
            let tag = strip_archive_suffix(file)?;
            let range = segments[3].1.clone();
            let suffix_len = file.len() - tag.len();
            (
                tag.to_string(),
                range.start..range.end - suffix_len,
                UrlPattern::Archive,
                None,
            )
        }
        _ => return None,
    };
    if tag.is_empty() {
        return None;
    }
    let (asset_file, asset_range) = match asset {
        Some((f, r)) => (Some(f), Some(r)),
        None => (None, None),
    };
    Some(UrlMatch {
        package: PackageRef {
            identity,
            tag,
            pattern,
            asset_file,
            url: url_no_query,
        },
        tag_range,
        asset_range,
        diagnostics,
    })
}

fn strip_archive_suffix(name: &str) -> Option<&str> {
    name.strip_suffix(".tar.gz")
        .or_else(|| name.strip_suffix(".zip"))
        .filter(|t| !t.is_empty())
}

/// Checks a matched URL against the registry: release URLs must be listed
/// assets, archive URLs must name an existing tag.
pub fn validate(package: &PackageRef, registry: &RegistrySnapshot) -> Result<bool, RegistryError> {
    let entry = registry
        .get(&package.identity)
        .ok_or_else(|| RegistryError::UnknownPackage(package.identity.clone()))?;
    Ok(match package.pattern {
        UrlPattern::Release => match &package.asset_file {
            Some(file) => entry.has_release_asset(&package.tag, file),
            None => false,
        },
        UrlPattern::Archive => entry.tag_index(&package.tag).is_some(),
    })
}

/// Matches and validates a URL in one step. Unknown packages are reported
/// as a diagnostic and treated as invalid.
pub fn identify(
    url: &str,
    registry: &RegistrySnapshot,
    diagnostics: &mut Vec<Diagnostic>,
) -> Option<PackageRef> {
    let package = match_github_url(url)?;
    match validate(&package, registry) {
        Ok(true) => Some(package),
        Ok(false) => None,
        Err(e) => {
            diagnostics.push(Diagnostic::warning(None, e.to_string()));
            None
        }
    }
}
