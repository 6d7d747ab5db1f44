//! Repository groups that share a package set, compared by product order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::history::{DockerfileTimeline, RepoStatus, TimelineSnapshot};
use crate::pkgid::PackageIdentity;
use crate::registry::{RegistryError, RegistrySnapshot};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetamaintError {
    #[error("cannot compare combinations of different package sets ({0} vs {1})")]
    SetMismatch(PackageSet, PackageSet),
}

/// Sorted, deduplicated identities; at least two.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<PackageIdentity>", into = "Vec<PackageIdentity>")]
pub struct PackageSet {
    members: Vec<PackageIdentity>,
}

impl PackageSet {
    pub fn new(members: impl IntoIterator<Item = PackageIdentity>) -> Option<Self> {
        let members: Vec<_> = members
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        (members.len() >= 2).then_some(Self { members })
    }

    pub fn members(&self) -> &[PackageIdentity] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// A file-system friendly name, e.g. `foo__a+foo__b`.
    pub fn slug(&self) -> String {
        self.members
            .iter()
            .map(|m| format!("{}__{}", m.owner(), m.repo()))
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl TryFrom<Vec<PackageIdentity>> for PackageSet {
    type Error = String;

    fn try_from(v: Vec<PackageIdentity>) -> Result<Self, String> {
        PackageSet::new(v).ok_or_else(|| "a package set needs at least two packages".to_string())
    }
}

impl From<PackageSet> for Vec<PackageIdentity> {
    fn from(s: PackageSet) -> Self {
        s.members
    }
}

impl fmt::Display for PackageSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.members.iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CombinationSource {
    pub repo: String,
    pub dockerfile: String,
    pub commit: String,
    pub timestamp: chrono::DateTime<chrono::Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionCombination {
    pub set: PackageSet,
    pub tags: BTreeMap<PackageIdentity, String>,
    pub indices: BTreeMap<PackageIdentity, usize>,
    pub source: CombinationSource,
}

impl VersionCombination {
    /// Indices in set order.
    pub fn index_vector(&self) -> Vec<usize> {
        self.set.members().iter().map(|m| self.indices[m]).collect()
    }

    pub fn same_versions(&self, other: &VersionCombination) -> bool {
        self.set == other.set && self.tags == other.tags
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductOrdering {
    Less,
    Equal,
    Greater,
    Incomparable,
}

/// Componentwise comparison of two index vectors of equal length.
pub fn compare_indices(x: &[usize], y: &[usize]) -> ProductOrdering {
    debug_assert_eq!(x.len(), y.len());
    let (mut le, mut ge) = (true, true);
    for (a, b) in x.iter().zip(y) {
        le &= a <= b;
        ge &= a >= b;
    }
    match (le, ge) {
        (true, true) => ProductOrdering::Equal,
        (true, false) => ProductOrdering::Less,
        (false, true) => ProductOrdering::Greater,
        (false, false) => ProductOrdering::Incomparable,
    }
}

pub fn compare_combinations(
    x: &VersionCombination,
    y: &VersionCombination,
) -> Result<ProductOrdering, MetamaintError> {
    if x.set != y.set {
        return Err(MetamaintError::SetMismatch(x.set.clone(), y.set.clone()));
    }
    Ok(compare_indices(&x.index_vector(), &y.index_vector()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupClass {
    NoUpdate,
    Equivalent,
    Incomparable,
    Comparable,
}

impl GroupClass {
    pub const ALL: [GroupClass; 4] = [
        GroupClass::NoUpdate,
        GroupClass::Equivalent,
        GroupClass::Incomparable,
        GroupClass::Comparable,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GroupClass::NoUpdate => "no update",
            GroupClass::Equivalent => "equivalent",
            GroupClass::Incomparable => "incomparable",
            GroupClass::Comparable => "comparable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMember {
    pub repo: String,
    pub status: RepoStatus,
    pub combination: VersionCombination,
    /// The Dockerfile no longer pins exactly this set at HEAD; the
    /// combination comes from its latest snapshot that did.
    #[serde(default)]
    pub drifted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoGroup {
    pub set: PackageSet,
    pub members: Vec<GroupMember>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<GroupClass>,
}

impl RepoGroup {
    /// The member combination every other member is ≤ to, if one exists.
    pub fn maximal(&self) -> Option<&GroupMember> {
        self.members.iter().find(|m| {
            self.members.iter().all(|o| {
                matches!(
                    compare_indices(&o.combination.index_vector(), &m.combination.index_vector()),
                    ProductOrdering::Less | ProductOrdering::Equal
                )
            })
        })
    }
}

/// A snapshot's combination, when every identity has exactly one tag and
/// every tag has a registry position.
fn combination_of(
    timeline: &DockerfileTimeline,
    snapshot: &TimelineSnapshot,
    registry: &RegistrySnapshot,
) -> Option<VersionCombination> {
    if !snapshot.valid {
        return None;
    }
    let by_id = snapshot.tags_by_identity();
    if by_id.values().any(|tags| tags.len() != 1) {
        return None;
    }
    let set = PackageSet::new(by_id.keys().map(|id| (*id).clone()))?;
    let mut tags = BTreeMap::new();
    let mut indices = BTreeMap::new();
    for (id, t) in by_id {
        let tag = *t.iter().next()?;
        indices.insert(id.clone(), registry.get(id)?.tag_index(tag)?);
        tags.insert(id.clone(), tag.to_string());
    }
    Some(VersionCombination {
        set,
        tags,
        indices,
        source: CombinationSource {
            repo: timeline.repo.clone(),
            dockerfile: timeline.path.clone(),
            commit: snapshot.commit.clone(),
            timestamp: snapshot.timestamp,
        },
    })
}

/// Groups repositories by the package sets their Dockerfiles pinned.
///
/// Only Dockerfiles that exist and parse at HEAD take part. `eligible`
/// maps each repository that may join a group to its status.
pub fn find_package_sets(
    timelines: &[DockerfileTimeline],
    eligible: &BTreeMap<String, RepoStatus>,
    registry: &RegistrySnapshot,
) -> Vec<RepoGroup> {
    // (set, repo) -> (member combination, drifted, path) chosen per timeline
    let per_timeline: Vec<Vec<(VersionCombination, bool)>> = timelines
        .par_iter()
        .filter(|t| eligible.contains_key(&t.repo) && t.is_analyzed())
        .map(|t| {
            let combos: Vec<VersionCombination> = t
                .snapshots
                .iter()
                .filter_map(|s| combination_of(t, s, registry))
                .collect();
            let head_set = t
                .head()
                .and_then(|h| combination_of(t, h, registry).map(|c| c.set));
            let mut latest: BTreeMap<PackageSet, VersionCombination> = BTreeMap::new();
            for c in combos {
                latest.insert(c.set.clone(), c);
            }
            latest
                .into_values()
                .map(|c| {
                    let drifted = head_set.as_ref() != Some(&c.set);
                    (c, drifted)
                })
                .collect()
        })
        .collect();

    let mut by_set: BTreeMap<PackageSet, BTreeMap<String, (VersionCombination, bool)>> =
        BTreeMap::new();
    for (combo, drifted) in per_timeline.into_iter().flatten() {
        let repos = by_set.entry(combo.set.clone()).or_default();
        match repos.get(&combo.source.repo) {
            Some((held, _))
                if (
                    held.source.timestamp,
                    std::cmp::Reverse(&held.source.dockerfile),
                ) >= (
                    combo.source.timestamp,
                    std::cmp::Reverse(&combo.source.dockerfile),
                ) => {}
            _ => {
                repos.insert(combo.source.repo.clone(), (combo, drifted));
            }
        }
    }

    by_set
        .into_iter()
        .filter(|(_, repos)| repos.len() >= 2)
        .map(|(set, repos)| RepoGroup {
            set,
            members: repos
                .into_iter()
                .map(|(repo, (combination, drifted))| GroupMember {
                    status: eligible[&repo],
                    repo,
                    combination,
                    drifted,
                })
                .collect(),
            classification: None,
        })
        .collect()
}

pub fn classify_group(g: &RepoGroup) -> GroupClass {
    if g.members.iter().all(|m| m.status == RepoStatus::NoUpdate) {
        return GroupClass::NoUpdate;
    }
    let vectors: Vec<Vec<usize>> = g
        .members
        .iter()
        .map(|m| m.combination.index_vector())
        .collect();
    if vectors.windows(2).all(|w| w[0] == w[1]) {
        return GroupClass::Equivalent;
    }
    let chain = vectors.iter().enumerate().all(|(i, a)| {
        vectors[i + 1..]
            .iter()
            .all(|b| compare_indices(a, b) != ProductOrdering::Incomparable)
    });
    if chain {
        GroupClass::Comparable
    } else {
        GroupClass::Incomparable
    }
}

/// Number of tag-list positions between two tags of one package.
pub fn tag_distance(
    identity: &PackageIdentity,
    from_tag: &str,
    to_tag: &str,
    registry: &RegistrySnapshot,
) -> Result<usize, RegistryError> {
    let from = registry.tag_index(identity, from_tag)?;
    let to = registry.tag_index(identity, to_tag)?;
    Ok(from.abs_diff(to))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub repos_with_differences: usize,
    pub max_version_difference: usize,
}

/// Metrics of a Comparable group; `None` when the group has no maximal
/// combination.
pub fn group_metrics(g: &RepoGroup, registry: &RegistrySnapshot) -> Option<GroupMetrics> {
    let max = g.maximal()?;
    let repos_with_differences = g
        .members
        .iter()
        .filter(|m| !m.combination.same_versions(&max.combination))
        .count();
    let mut max_version_difference = 0;
    for id in g.set.members() {
        let tags: Vec<&str> = g
            .members
            .iter()
            .map(|m| m.combination.tags[id].as_str())
            .collect();
        let lowest = tags.iter().min_by_key(|t| registry.tag_index(id, t).ok())?;
        let highest = tags.iter().max_by_key(|t| registry.tag_index(id, t).ok())?;
        max_version_difference =
            max_version_difference.max(tag_distance(id, lowest, highest, registry).ok()?);
    }
    Some(GroupMetrics {
        repos_with_differences,
        max_version_difference,
    })
}
