use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::DockerfileTimeline;
use crate::span::Diagnostic;

/// Checked in declaration order; the first that applies wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DockerfileStatus {
    Dormant,
    AllPackagesDeleted,
    MultipleVersions,
    PackageUpdated,
    NoPackageUpdated,
}

impl DockerfileStatus {
    pub const ALL: [DockerfileStatus; 5] = [
        DockerfileStatus::Dormant,
        DockerfileStatus::AllPackagesDeleted,
        DockerfileStatus::MultipleVersions,
        DockerfileStatus::NoPackageUpdated,
        DockerfileStatus::PackageUpdated,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DockerfileStatus::Dormant => "dormant",
            DockerfileStatus::AllPackagesDeleted => "all packages deleted",
            DockerfileStatus::MultipleVersions => "multiple versions",
            DockerfileStatus::PackageUpdated => "package updated",
            DockerfileStatus::NoPackageUpdated => "no package updated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepoStatus {
    WithUpdate,
    NoUpdate,
    Other,
}

impl RepoStatus {
    pub const ALL: [RepoStatus; 3] = [
        RepoStatus::WithUpdate,
        RepoStatus::NoUpdate,
        RepoStatus::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RepoStatus::WithUpdate => "with update",
            RepoStatus::NoUpdate => "no update",
            RepoStatus::Other => "other",
        }
    }
}

/// Unparsable versions are skipped when comparing neighbours: they say
/// nothing about whether a package was removed.
pub fn classify_dockerfile(
    t: &DockerfileTimeline,
    repo_last_commit: DateTime<Utc>,
    dormancy_cutoff: DateTime<Utc>,
) -> DockerfileStatus {
    if repo_last_commit < dormancy_cutoff {
        return DockerfileStatus::Dormant;
    }
    let valid: Vec<_> = t.snapshots.iter().filter(|s| s.valid).collect();
    if let Some((head, earlier)) = valid.split_last() {
        if head.packages.is_empty() && earlier.iter().any(|s| !s.packages.is_empty()) {
            return DockerfileStatus::AllPackagesDeleted;
        }
    }
    let tag_maps: Vec<_> = valid.iter().map(|s| s.tags_by_identity()).collect();
    if tag_maps
        .iter()
        .any(|m| m.values().any(|tags| tags.len() > 1))
    {
        return DockerfileStatus::MultipleVersions;
    }
    let updated = tag_maps.windows(2).any(|w| {
        w[0].iter()
            .any(|(id, tags)| w[1].get(id).is_some_and(|next| next != tags))
    });
    if updated {
        DockerfileStatus::PackageUpdated
    } else {
        DockerfileStatus::NoPackageUpdated
    }
}

pub fn classify_repo(statuses: &[DockerfileStatus]) -> (RepoStatus, Option<Diagnostic>) {
    if statuses.is_empty() {
        return (
            RepoStatus::Other,
            Some(Diagnostic::warning(
                None,
                "repository has no classified Dockerfiles",
            )),
        );
    }
    let status = if statuses.contains(&DockerfileStatus::PackageUpdated) {
        RepoStatus::WithUpdate
    } else if statuses
        .iter()
        .all(|s| *s == DockerfileStatus::NoPackageUpdated)
    {
        RepoStatus::NoUpdate
    } else {
        RepoStatus::Other
    };
    (status, None)
}
