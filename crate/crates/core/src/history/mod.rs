//! Per-Dockerfile timelines across git history, and their classification.

mod classify;
pub mod source;

pub use classify::{classify_dockerfile, classify_repo, DockerfileStatus, RepoStatus};
pub use source::{
    discover_corpus, git_history, ChangeKind, CommitInfo, ExportedCommit, ExportedRepo, FileEvent,
    HistoryError, HistoryExport, RepoHistory, RepoSource,
};

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dockerfile::{parse_dockerfile_with, ParseOptions};
use crate::extract::{build_env, extract_urls_with_diagnostics, SourceKind};
use crate::pkgid::{match_github_url, validate, PackageIdentity, PackageRef, PinnedPackage};
use crate::registry::{RegistryError, RegistrySnapshot};
use crate::span::{Diagnostic, SourceSpan};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanOptions {
    pub lenient_from: bool,
    /// Match GitHub URLs even when some variable in them had no binding.
    pub keep_unresolved: bool,
}

/// One URL found in one Dockerfile version, before registry validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UrlRecord {
    pub url: String,
    pub source_kind: SourceKind,
    pub location: SourceSpan,
    pub fully_resolved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub package: Option<PackageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedSnapshot {
    pub commit: CommitInfo,
    pub valid: bool,
    pub urls: Vec<UrlRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedDockerfile {
    pub path: String,
    pub previous_paths: Vec<String>,
    pub present_at_head: bool,
    pub latest_text: Option<String>,
    pub snapshots: Vec<ScannedSnapshot>,
}

/// A repository's Dockerfiles parsed and URL-matched across history;
/// independent of any registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedRepo {
    pub id: String,
    pub head: Option<CommitInfo>,
    pub dockerfiles: Vec<ScannedDockerfile>,
}

impl ScannedRepo {
    /// Every GitHub identity the repository mentions in a usable URL.
    pub fn identities(&self, options: ScanOptions) -> BTreeSet<PackageIdentity> {
        self.dockerfiles
            .iter()
            .flat_map(|d| &d.snapshots)
            .flat_map(|s| &s.urls)
            .filter(|u| u.fully_resolved || options.keep_unresolved)
            .filter_map(|u| u.package.as_ref().map(|p| p.identity.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineSnapshot {
    pub commit: String,
    pub timestamp: DateTime<Utc>,
    pub valid: bool,
    pub packages: Vec<PinnedPackage>,
}

impl TimelineSnapshot {
    /// Tags per identity; more than one tag means the file pins several
    /// versions of the same package.
    pub fn tags_by_identity(&self) -> BTreeMap<&PackageIdentity, BTreeSet<&str>> {
        let mut out: BTreeMap<_, BTreeSet<&str>> = BTreeMap::new();
        for p in &self.packages {
            out.entry(&p.package.identity)
                .or_default()
                .insert(p.package.tag.as_str());
        }
        out
    }

    pub fn identities(&self) -> BTreeSet<&PackageIdentity> {
        self.packages.iter().map(|p| &p.package.identity).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DockerfileTimeline {
    pub repo: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub previous_paths: Vec<String>,
    pub present_at_head: bool,
    pub snapshots: Vec<TimelineSnapshot>,
    /// Content at HEAD, when the file still exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latest_text: Option<String>,
}

impl DockerfileTimeline {
    pub fn head(&self) -> Option<&TimelineSnapshot> {
        if self.present_at_head {
            self.snapshots.last()
        } else {
            None
        }
    }

    /// Exists and parses at HEAD, and pinned at least one package in some
    /// version. Only such Dockerfiles receive a status.
    pub fn is_analyzed(&self) -> bool {
        self.head().is_some_and(|h| h.valid)
            && self.snapshots.iter().any(|s| !s.packages.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoTimelines {
    pub repo: String,
    pub head_commit: Option<String>,
    pub last_commit: Option<DateTime<Utc>>,
    pub timelines: Vec<DockerfileTimeline>,
}

#[derive(Default)]
struct Building {
    previous_paths: Vec<String>,
    present: bool,
    latest: Option<Vec<u8>>,
    snapshots: Vec<ScannedSnapshot>,
}

fn scan_version(
    content: &[u8],
    path: &str,
    commit: &CommitInfo,
    options: ScanOptions,
) -> ScannedSnapshot {
    let ast = parse_dockerfile_with(
        content,
        path,
        ParseOptions {
            lenient_from: options.lenient_from,
        },
    );
    let mut diagnostics = ast.parse_diagnostics.clone();
    let mut urls = Vec::new();
    if ast.valid {
        let env = build_env(&ast);
        diagnostics.extend(env.diagnostics.iter().cloned());
        let (found, diags) = extract_urls_with_diagnostics(&ast, &env);
        diagnostics.extend(diags);
        urls = found
            .into_iter()
            .map(|u| UrlRecord {
                package: match_github_url(&u.url),
                url: u.url,
                source_kind: u.source_kind,
                location: u.span,
                fully_resolved: u.fully_resolved,
            })
            .collect();
    }
    ScannedSnapshot {
        commit: commit.clone(),
        valid: ast.valid,
        urls,
        diagnostics,
    }
}

/// Parses every Dockerfile version of a repository and matches its URLs.
pub fn scan_history(history: &RepoHistory, options: ScanOptions) -> ScannedRepo {
    let mut files: BTreeMap<String, Building> = BTreeMap::new();
    for event in &history.events {
        match event.kind {
            ChangeKind::Deleted => {
                if let Some(b) = files.get_mut(&event.path) {
                    b.present = false;
                    b.latest = None;
                }
            }
            ChangeKind::Renamed => {
                let old = event.old_path.clone().unwrap_or_default();
                let mut b = files.remove(&old).unwrap_or_default();
                if !b.snapshots.is_empty() {
                    b.previous_paths.push(old);
                }
                files.insert(event.path.clone(), b);
            }
            ChangeKind::Added | ChangeKind::Modified => {}
        }
        if event.kind == ChangeKind::Deleted {
            continue;
        }
        let b = files.entry(event.path.clone()).or_default();
        let Some(content) = &event.content else {
            log::warn!(
                "{}: no content for {} at {}",
                history.id,
                event.path,
                event.commit.id
            );
            continue;
        };
        b.present = true;
        b.latest = Some(content.clone());
        b.snapshots
            .push(scan_version(content, &event.path, &event.commit, options));
    }
    let dockerfiles = files
        .into_iter()
        .filter(|(_, b)| !b.snapshots.is_empty())
        .map(|(path, mut b)| {
            // ties keep history order
            b.snapshots.sort_by_key(|s| s.commit.timestamp);
            ScannedDockerfile {
                path,
                previous_paths: b.previous_paths,
                present_at_head: b.present,
                latest_text: b
                    .latest
                    .filter(|_| b.present)
                    .map(|c| String::from_utf8_lossy(&c).into_owned()),
                snapshots: b.snapshots,
            }
        })
        .collect();
    ScannedRepo {
        id: history.id.clone(),
        head: history.head.clone(),
        dockerfiles,
    }
}

/// Keeps the URLs whose package the registry confirms.
///
/// Identities the registry does not know are silently dropped; the caller
/// decides which identities to fetch.
pub fn validate_scan(
    scan: &ScannedRepo,
    registry: &RegistrySnapshot,
    options: ScanOptions,
) -> RepoTimelines {
    let timelines = scan
        .dockerfiles
        .iter()
        .map(|d| DockerfileTimeline {
            repo: scan.id.clone(),
            path: d.path.clone(),
            previous_paths: d.previous_paths.clone(),
            present_at_head: d.present_at_head,
            latest_text: d.latest_text.clone(),
            snapshots: d
                .snapshots
                .iter()
                .map(|s| TimelineSnapshot {
                    commit: s.commit.id.clone(),
                    timestamp: s.commit.timestamp,
                    valid: s.valid,
                    packages: validated_packages(s, &d.path, registry, options),
                })
                .collect(),
        })
        .collect();
    RepoTimelines {
        repo: scan.id.clone(),
        head_commit: scan.head.as_ref().map(|c| c.id.clone()),
        last_commit: scan.head.as_ref().map(|c| c.timestamp),
        timelines,
    }
}

fn validated_packages(
    snapshot: &ScannedSnapshot,
    path: &str,
    registry: &RegistrySnapshot,
    options: ScanOptions,
) -> Vec<PinnedPackage> {
    snapshot
        .urls
        .iter()
        .filter(|u| u.fully_resolved || options.keep_unresolved)
        .filter_map(|u| {
            let package = u.package.as_ref()?;
            match validate(package, registry) {
                Ok(true) => Some(PinnedPackage {
                    package: package.clone(),
                    location: u.location.clone(),
                    dockerfile: path.to_string(),
                    commit: snapshot.commit.id.clone(),
                }),
                Ok(false) | Err(RegistryError::UnknownPackage(_)) => None,
                Err(e) => {
                    log::warn!("{path}: {e}");
                    None
                }
            }
        })
        .collect()
}

/// Scans and validates one repository's history in one go.
pub fn build_timelines(
    history: &RepoHistory,
    registry: &RegistrySnapshot,
    options: ScanOptions,
) -> RepoTimelines {
    validate_scan(&scan_history(history, options), registry, options)
}
