//! Update recommendations for lagging members of Comparable groups.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dockerfile::{parse_dockerfile_with, ParseOptions};
use crate::extract::{build_env, extract_urls, ExtractedUrl};
use crate::metamaint::{classify_group, GroupClass, GroupMember, RepoGroup};
use crate::pkgid::{
    match_github_url, match_github_url_detailed, validate, PackageIdentity, UrlPattern,
};
use crate::registry::RegistrySnapshot;
use crate::span::SourceSpan;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("{identity} {tag}: text at {site} also feeds a URL that is not being updated")]
    AmbiguousEdit {
        identity: PackageIdentity,
        tag: String,
        site: SourceSpan,
    },
    #[error("{identity} {tag}: cannot locate the tag in the source")]
    UnlocatableTag {
        identity: PackageIdentity,
        tag: String,
    },
    #[error("{identity}: no URL pins tag {tag}")]
    TagNotPinned {
        identity: PackageIdentity,
        tag: String,
    },
    #[error("{path}: Dockerfile does not parse")]
    Unparsable { path: String },
    #[error("rewritten file pins {found}, expected {expected}")]
    RoundTrip { expected: String, found: String },
}

#[derive(Debug, thiserror::Error)]
pub enum RecommendError {
    #[error("group {0} is not comparable ({1:?})")]
    NotComparable(String, GroupClass),
    #[error("advisories file {path}: {message}")]
    Advisories { path: String, message: String },
}

/// One package version move inside a Dockerfile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedChange {
    pub identity: PackageIdentity,
    pub from_tag: String,
    pub to_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageChange {
    pub identity: PackageIdentity,
    pub from_tag: String,
    pub to_tag: String,
    pub edit_sites: Vec<SourceSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub text: String,
    pub changes: Vec<PackageChange>,
    /// Byte ranges of the original that were replaced.
    pub edited: Vec<Range<usize>>,
    /// New URLs of the updated packages.
    pub new_urls: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationStatus {
    Ready,
    Held,
    Unverifiable,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub repo: String,
    pub dockerfile: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub group: String,
    pub target: Target,
    pub status: RecommendationStatus,
    pub changes: Vec<PackageChange>,
    pub evidence: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cautions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub original_text: String,
    #[serde(skip)]
    pub rewritten_text: String,
    #[serde(skip)]
    pub message: String,
}

impl Recommendation {
    pub fn has_patch(&self) -> bool {
        matches!(
            self.status,
            RecommendationStatus::Ready | RecommendationStatus::Held
        )
    }

    pub fn patch(&self) -> String {
        unified_diff(
            &self.original_text,
            &self.rewritten_text,
            &self.target.dockerfile,
        )
    }
}

/// Tags known to be problematic, per package.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Advisories(pub BTreeMap<PackageIdentity, BTreeSet<String>>);

impl Advisories {
    pub fn load(path: &Path) -> Result<Self, RecommendError> {
        let err = |message: String| RecommendError::Advisories {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn flags(&self, identity: &PackageIdentity, tag: &str) -> bool {
        self.0.get(identity).is_some_and(|tags| tags.contains(tag))
    }
}

/// Everything [`plan_updates`] needs besides the group.
pub struct PlanContext<'a> {
    pub registry: &'a RegistrySnapshot,
    pub advisories: &'a Advisories,
    /// HEAD content of `(repo, dockerfile)`.
    pub texts: &'a BTreeMap<(String, String), String>,
    pub parse: ParseOptions,
}

/// One recommendation per member below the group maximum.
pub fn plan_updates(
    group: &RepoGroup,
    ctx: &PlanContext<'_>,
) -> Result<Vec<Recommendation>, RecommendError> {
    let class = classify_group(group);
    if class != GroupClass::Comparable {
        return Err(RecommendError::NotComparable(group.set.to_string(), class));
    }
    let max = group
        .maximal()
        .expect("comparable groups have a maximal member");
    let evidence: Vec<String> = group
        .members
        .iter()
        .filter(|m| m.combination.same_versions(&max.combination))
        .map(|m| m.repo.clone())
        .collect();
    let mut out = Vec::new();
    for member in &group.members {
        if member.combination.same_versions(&max.combination) {
            continue;
        }
        out.push(recommend_member(group, member, max, &evidence, ctx));
    }
    Ok(out)
}

fn recommend_member(
    group: &RepoGroup,
    member: &GroupMember,
    max: &GroupMember,
    evidence: &[String],
    ctx: &PlanContext<'_>,
) -> Recommendation {
    let dockerfile = member.combination.source.dockerfile.clone();
    let plan: Vec<PlannedChange> = group
        .set
        .members()
        .iter()
        .filter(|id| member.combination.tags[*id] != max.combination.tags[*id])
        .map(|id| PlannedChange {
            identity: id.clone(),
            from_tag: member.combination.tags[id].clone(),
            to_tag: max.combination.tags[id].clone(),
        })
        .collect();
    let mut rec = Recommendation {
        group: group.set.slug(),
        target: Target {
            repo: member.repo.clone(),
            dockerfile: dockerfile.clone(),
        },
        status: RecommendationStatus::Ready,
        changes: plan
            .iter()
            .map(|c| PackageChange {
                identity: c.identity.clone(),
                from_tag: c.from_tag.clone(),
                to_tag: c.to_tag.clone(),
                edit_sites: Vec::new(),
            })
            .collect(),
        evidence: evidence.to_vec(),
        cautions: Vec::new(),
        notes: Vec::new(),
        original_text: String::new(),
        rewritten_text: String::new(),
        message: String::new(),
    };
    let key = (member.repo.clone(), dockerfile.clone());
    let original = match ctx.texts.get(&key) {
        Some(t) if !member.drifted => t.clone(),
        Some(_) => {
            rec.status = RecommendationStatus::Error;
            rec.notes
                .push("the Dockerfile no longer pins exactly this package set at HEAD".into());
            rec.message = render_message(&rec);
            return rec;
        }
        None => {
            rec.status = RecommendationStatus::Error;
            rec.notes
                .push("Dockerfile content at HEAD is unavailable".into());
            rec.message = render_message(&rec);
            return rec;
        }
    };
    rec.original_text = original.clone();
    match rewrite_dockerfile(&original, &dockerfile, &plan, ctx.parse) {
        Ok(rw) => {
            rec.changes = rw.changes;
            rec.rewritten_text = rw.text;
            let unverified: Vec<&String> = rw
                .new_urls
                .iter()
                .filter(|u| {
                    !match_github_url(u)
                        .is_some_and(|p| validate(&p, ctx.registry).unwrap_or(false))
                })
                .collect();
            for u in &unverified {
                rec.notes
                    .push(format!("not confirmed by the registry: {u}"));
            }
            for c in &rec.changes {
                if ctx.advisories.flags(&c.identity, &c.to_tag) {
                    rec.cautions.push(format!(
                        "{} {} is listed in the advisories file. Check it before applying this update.",
                        c.identity, c.to_tag
                    ));
                }
            }
            rec.status = if !unverified.is_empty() {
                RecommendationStatus::Unverifiable
            } else if !rec.cautions.is_empty() {
                RecommendationStatus::Held
            } else {
                RecommendationStatus::Ready
            };
        }
        Err(e) => {
            rec.status = RecommendationStatus::Error;
            rec.notes.push(e.to_string());
        }
    }
    rec.message = render_message(&rec);
    rec
}

/// Trailing run of digits and dots, starting with a digit: `v1.2` → `1.2`.
fn numeric_core(tag: &str) -> Option<&str> {
    let start = tag
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '.')
        .last()
        .map(|(i, _)| i)?;
    let core = tag[start..].trim_start_matches('.');
    (!core.is_empty() && core != tag).then_some(core)
}

/// Occurrences of `needle` in `hay` not glued to other version digits.
fn version_occurrences(hay: &str, needle: &str) -> Vec<usize> {
    let bytes = hay.as_bytes();
    let digit_at = |i: usize| bytes.get(i).is_some_and(u8::is_ascii_digit);
    hay.match_indices(needle)
        .map(|(i, _)| i)
        .filter(|&i| {
            let end = i + needle.len();
            let before_ok =
                i == 0 || !(digit_at(i - 1) || (bytes[i - 1] == b'.' && i >= 2 && digit_at(i - 2)));
            let after_ok = !(digit_at(end) || (bytes.get(end) == Some(&b'.') && digit_at(end + 1)));
            before_ok && after_ok
        })
        .collect()
}

/// Replacements (URL byte range, new text) that move one URL to `to`.
fn url_replacements(
    url: &str,
    tag_range: Range<usize>,
    asset_range: Option<Range<usize>>,
    from: &str,
    to: &str,
) -> Vec<(Range<usize>, String)> {
    let mut out = vec![(tag_range, to.to_string())];
    if let Some(asset) = asset_range {
        let file = &url[asset.clone()];
        let mut hits = version_occurrences(file, from);
        let (old, new) = if !hits.is_empty() {
            (from, to)
        } else {
            match (numeric_core(from), numeric_core(to)) {
                (Some(o), Some(n)) => {
                    hits = version_occurrences(file, o);
                    (o, n)
                }
                (Some(o), None) => {
                    hits = version_occurrences(file, o);
                    (o, to)
                }
                _ => (from, to),
            }
        };
        for h in hits {
            let start = asset.start + h;
            out.push((start..start + old.len(), new.to_string()));
        }
    }
    out
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|b| **b == b'\n')
        .count()
        + 1
}

fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn common_suffix(a: &[u8], b: &[u8]) -> usize {
    a.iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count()
}

/// Maps a replacement inside a resolved URL back to a source edit.
fn source_edit(
    url: &ExtractedUrl,
    range: Range<usize>,
    new: &str,
    source: &str,
) -> Option<(Range<usize>, String)> {
    let old = &url.url.as_bytes()[range.clone()];
    let p = common_prefix(old, new.as_bytes());
    let s = common_suffix(&old[p..], &new.as_bytes()[p..]);
    let old_mid = range.start + p..range.end - s;
    let new_mid = &new[p..new.len() - s];
    let src = if old_mid.is_empty() {
        let after_prev = old_mid
            .start
            .checked_sub(1)
            .and_then(|i| url.origins[i])
            .map(|o| o + 1);
        let before_next = url.origins.get(old_mid.start).copied().flatten();
        let at = after_prev.or(before_next)?;
        at..at
    } else {
        let origins: Option<Vec<usize>> = url.origins[old_mid.clone()].iter().copied().collect();
        let origins = origins?;
        if origins.windows(2).any(|w| w[1] != w[0] + 1) {
            return None;
        }
        origins[0]..origins[origins.len() - 1] + 1
    };
    if source.get(src.clone())? != &url.url[old_mid] {
        return None;
    }
    Some((src, new_mid.to_string()))
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    if a.is_empty() {
        b.start < a.start && a.start < b.end
    } else {
        a.start < b.end && b.start < a.end
    }
}

/// Moves each planned package from its old tag to its new one.
///
/// Tags that reach a URL through a variable are changed where the variable
/// is defined; literal tags are changed inside the URL. Nothing else in the
/// file is touched.
pub fn rewrite_dockerfile(
    text: &str,
    path: &str,
    plan: &[PlannedChange],
    options: ParseOptions,
) -> Result<Rewrite, RewriteError> {
    let ast = parse_dockerfile_with(text.as_bytes(), path, options);
    if !ast.valid {
        return Err(RewriteError::Unparsable { path: path.into() });
    }
    let source = ast.source();
    let env = build_env(&ast);
    let urls = extract_urls(&ast, &env);

    // (source range, replacement, url index, change index)
    let mut edits: Vec<(Range<usize>, String, usize)> = Vec::new();
    let mut changed_urls = BTreeSet::new();
    let mut new_urls = Vec::new();
    let mut changes: Vec<PackageChange> = Vec::new();
    for change in plan {
        let mut sites = BTreeSet::new();
        for (ui, url) in urls.iter().enumerate() {
            let Some(m) = match_github_url_detailed(&url.url) else {
                continue;
            };
            if m.package.identity != change.identity || m.package.tag != change.from_tag {
                continue;
            }
            let asset = (m.package.pattern == UrlPattern::Release)
                .then_some(m.asset_range.clone())
                .flatten();
            let replacements = url_replacements(
                &url.url,
                m.tag_range.clone(),
                asset,
                &change.from_tag,
                &change.to_tag,
            );
            let mut new_url = url.url.clone();
            for (r, n) in replacements.iter().rev() {
                new_url.replace_range(r.clone(), n);
            }
            new_urls.push(new_url);
            changed_urls.insert(ui);
            for (r, n) in replacements {
                let (src, rep) = source_edit(url, r, &n, source).ok_or_else(|| {
                    RewriteError::UnlocatableTag {
                        identity: change.identity.clone(),
                        tag: change.from_tag.clone(),
                    }
                })?;
                sites.insert(line_of(source, src.start));
                edits.push((src, rep, changes.len()));
            }
        }
        if sites.is_empty() {
            return Err(RewriteError::TagNotPinned {
                identity: change.identity.clone(),
                tag: change.from_tag.clone(),
            });
        }
        changes.push(PackageChange {
            identity: change.identity.clone(),
            from_tag: change.from_tag.clone(),
            to_tag: change.to_tag.clone(),
            edit_sites: sites
                .into_iter()
                .map(|l| SourceSpan::line(path, l))
                .collect(),
        });
    }

    edits.sort_by(|a, b| (a.0.start, a.0.end, &a.1).cmp(&(b.0.start, b.0.end, &b.1)));
    edits.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    for w in edits.windows(2) {
        if overlaps(&w[0].0, &w[1].0) || overlaps(&w[1].0, &w[0].0) || w[0].0 == w[1].0 {
            let c = &plan[w[1].2];
            return Err(RewriteError::AmbiguousEdit {
                identity: c.identity.clone(),
                tag: c.from_tag.clone(),
                site: SourceSpan::line(path, line_of(source, w[1].0.start)),
            });
        }
    }
    for (ui, url) in urls.iter().enumerate() {
        if changed_urls.contains(&ui) {
            continue;
        }
        for (range, _, ci) in &edits {
            let touched = url.origins.iter().flatten().any(|o| {
                if range.is_empty() {
                    false
                } else {
                    range.contains(o)
                }
            });
            if touched {
                let c = &plan[*ci];
                return Err(RewriteError::AmbiguousEdit {
                    identity: c.identity.clone(),
                    tag: c.from_tag.clone(),
                    site: SourceSpan::line(path, line_of(source, range.start)),
                });
            }
        }
    }

    let mut out = source.to_string();
    for (range, rep, _) in edits.iter().rev() {
        out.replace_range(range.clone(), rep);
    }
    verify_round_trip(text, &out, path, plan, options)?;
    Ok(Rewrite {
        text: out,
        changes,
        edited: edits.into_iter().map(|(r, _, _)| r).collect(),
        new_urls,
    })
}

/// Tags per identity pinned by a Dockerfile text, ignoring the registry.
pub fn pinned_tags(
    text: &str,
    path: &str,
    options: ParseOptions,
) -> BTreeMap<PackageIdentity, BTreeSet<String>> {
    let ast = parse_dockerfile_with(text.as_bytes(), path, options);
    let env = build_env(&ast);
    let mut out: BTreeMap<PackageIdentity, BTreeSet<String>> = BTreeMap::new();
    for url in extract_urls(&ast, &env) {
        if let Some(p) = match_github_url(&url.url) {
            out.entry(p.identity).or_default().insert(p.tag);
        }
    }
    out
}

fn verify_round_trip(
    before: &str,
    after: &str,
    path: &str,
    plan: &[PlannedChange],
    options: ParseOptions,
) -> Result<(), RewriteError> {
    let mut expected = pinned_tags(before, path, options);
    for c in plan {
        if let Some(tags) = expected.get_mut(&c.identity) {
            tags.remove(&c.from_tag);
            tags.insert(c.to_tag.clone());
        }
    }
    let found = pinned_tags(after, path, options);
    if found != expected {
        let show = |m: &BTreeMap<PackageIdentity, BTreeSet<String>>| {
            m.iter()
                .map(|(k, v)| format!("{k}@{}", v.iter().cloned().collect::<Vec<_>>().join("|")))
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(RewriteError::RoundTrip {
            expected: show(&expected),
            found: show(&found),
        });
    }
    Ok(())
}

fn join_english(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Pull-request body for a recommendation.
pub fn render_message(rec: &Recommendation) -> String {
    let moves: Vec<String> = rec
        .changes
        .iter()
        .map(|c| format!("{} from {} to {}", c.identity, c.from_tag, c.to_tag))
        .collect();
    let (these, are, packages) = if rec.changes.len() == 1 {
        ("this update", "is", "package")
    } else {
        ("these updates", "are", "packages")
    };
    let mut out = String::new();
    out.push_str(&format!(
        "# Update {} in {}\n\n",
        join_english(
            &rec.changes
                .iter()
                .map(|c| c.identity.to_string())
                .collect::<Vec<_>>()
        ),
        rec.target.dockerfile
    ));
    for caution in &rec.cautions {
        out.push_str(&format!("> **Caution:** {caution}\n"));
    }
    if !rec.cautions.is_empty() {
        out.push('\n');
    }
    out.push_str(&format!(
        "In this pull request, I am updating {}. Since {these} {are} being done in {}, I'm wondering if this project can update the {packages} as well.\n",
        join_english(&moves),
        join_english(&rec.evidence),
    ));
    let sites: Vec<String> = rec
        .changes
        .iter()
        .flat_map(|c| {
            c.edit_sites
                .iter()
                .map(move |s| format!("- {s} ({})", c.identity))
        })
        .collect();
    if !sites.is_empty() {
        out.push_str("\nEdited lines:\n\n");
        for s in sites {
            out.push_str(&s);
            out.push('\n');
        }
    }
    for note in &rec.notes {
        out.push_str(&format!("\nNote: {note}\n"));
    }
    out
}

/// `diff -u` style patch, applicable with `patch -p1` from the repository root.
pub fn unified_diff(original: &str, rewritten: &str, path: &str) -> String {
    similar::TextDiff::from_lines(original, rewritten)
        .unified_diff()
        .context_radius(3)
        .header(&format!("a/{path}"), &format!("b/{path}"))
        .to_string()
}
