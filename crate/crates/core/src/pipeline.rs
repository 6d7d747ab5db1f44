//! The staged pipeline: scan, classify, groups, recommend, report.
//!
//! Each stage reads the JSON artifacts of the stages before it from the
//! output directory and writes its own next to them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dockerfile::ParseOptions;
use crate::extract::domain_histogram;
use crate::history::{
    classify_dockerfile, classify_repo, discover_corpus, scan_history, validate_scan,
    DockerfileStatus, RepoStatus, RepoTimelines, ScanOptions, ScannedRepo, UrlRecord,
};
use crate::metamaint::{
    classify_group, find_package_sets, group_metrics, GroupClass, GroupMember, GroupMetrics,
    PackageSet,
};
use crate::pkgid::{validate, PackageIdentity};
use crate::recommend::{
    plan_updates, Advisories, PlanContext, Recommendation, RecommendationStatus,
};
use crate::registry::live::{fetch_live, FetchError};
use crate::registry::{load_fixture, RegistrySnapshot};
use crate::span::Diagnostic;

pub const TIMELINES: &str = "timelines.json";
pub const EXTRACTION: &str = "extraction.json";
pub const DOMAINS: &str = "domains.json";
pub const REGISTRY: &str = "registry.json";
pub const CLASSIFICATION: &str = "classification.json";
pub const CLASSIFICATION_TXT: &str = "classification.txt";
pub const GROUPS: &str = "groups.json";
pub const RECOMMENDATIONS: &str = "recommendations";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad invocation or missing inputs.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryMode {
    Fixture(PathBuf),
    Live {
        token: Option<String>,
        cache_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub registry: Option<RegistryMode>,
    pub cutoff: DateTime<Utc>,
    pub out: PathBuf,
    /// Worker threads; `None` uses the available parallelism.
    pub jobs: Option<usize>,
    pub scan: ScanOptions,
    pub advisories: Option<PathBuf>,
}

impl RunConfig {
    fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            lenient_from: self.scan.lenient_from,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            builder = builder.num_threads(n.max(1));
        }
        builder
            .build()
            .map_err(|e| PipelineError::Usage(format!("cannot start worker pool: {e}")))
    }
}

/// Result of a stage that ran to completion, possibly with per-item
/// failures.
#[derive(Debug, Default)]
pub struct StageOutcome {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl StageOutcome {
    pub fn is_partial(&self) -> bool {
        !self.errors.is_empty()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Usage(format!(
            "{}: {e} (run the earlier pipeline stages first)",
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoError {
    pub repo: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinesArtifact {
    pub repos: Vec<RepoTimelines>,
    pub errors: Vec<RepoError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractedUrlRow {
    #[serde(flatten)]
    pub record: UrlRecord,
    pub validated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractionRow {
    pub repo: String,
    pub dockerfile: String,
    pub commit: String,
    pub valid: bool,
    pub urls: Vec<ExtractedUrlRow>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads every repository, resolves the registry, and writes the
/// extraction, domain, registry and timeline artifacts.
pub fn scan(config: &RunConfig) -> Result<StageOutcome, PipelineError> {
    let corpus = config
        .corpus
        .as_ref()
        .ok_or_else(|| PipelineError::Usage("--corpus is required for scan".into()))?;
    if !corpus.exists() {
        return Err(PipelineError::Usage(format!(
            "corpus {} does not exist",
            corpus.display()
        )));
    }
    let mode = config
        .registry
        .as_ref()
        .ok_or_else(|| PipelineError::Usage("pass --registry-fixture or --live".into()))?;
    let mut outcome = StageOutcome::default();
    let sources = discover_corpus(corpus).map_err(|e| PipelineError::Usage(e.to_string()))?;
    if sources.is_empty() {
        outcome.warnings.push(format!(
            "corpus {} contains no repositories",
            corpus.display()
        ));
    }
    let pool = config.pool()?;
    let options = config.scan;
    let scanned: Vec<Result<ScannedRepo, RepoError>> = pool.install(|| {
        sources
            .par_iter()
            .map(|s| {
                s.load()
                    .map(|h| scan_history(&h, options))
                    .map_err(|e| RepoError {
                        repo: s.id().to_string(),
                        message: e.to_string(),
                    })
            })
            .collect()
    });
    let (ok, errors): (Vec<_>, Vec<_>) = scanned.into_iter().partition(Result::is_ok);
    let scans: Vec<ScannedRepo> = ok.into_iter().map(Result::unwrap).collect();
    let mut errors: Vec<RepoError> = errors.into_iter().map(|e| e.unwrap_err()).collect();

    let identities: BTreeSet<PackageIdentity> =
        scans.iter().flat_map(|s| s.identities(options)).collect();
    let registry = match mode {
        RegistryMode::Fixture(path) => load_fixture(path)
            .map_err(|e| PipelineError::Usage(e.to_string()))?
            .subset(&identities),
        RegistryMode::Live { token, cache_dir } => {
            let result = fetch_live(&identities, token.clone(), cache_dir.clone())
                .map_err(PipelineError::Usage)?;
            for (id, err) in &result.errors {
                match err {
                    FetchError::NotFound => outcome
                        .warnings
                        .push(format!("{id}: not found on GitHub, treated as unknown")),
                    other => errors.push(RepoError {
                        repo: id.to_string(),
                        message: format!("registry: {other}"),
                    }),
                }
            }
            result.snapshot
        }
    };

    let repos: Vec<RepoTimelines> = pool.install(|| {
        scans
            .par_iter()
            .map(|s| validate_scan(s, &registry, options))
            .collect()
    });

    let mut extraction = Vec::new();
    let mut head_urls: Vec<(&str, Vec<&str>)> = Vec::new();
    for s in &scans {
        let mut urls = Vec::new();
        for d in s.dockerfiles.iter().filter(|d| d.present_at_head) {
            let Some(head) = d.snapshots.last() else {
                continue;
            };
            urls.extend(head.urls.iter().map(|u| u.url.as_str()));
            extraction.push(ExtractionRow {
                repo: s.id.clone(),
                dockerfile: d.path.clone(),
                commit: head.commit.id.clone(),
                valid: head.valid,
                urls: head
                    .urls
                    .iter()
                    .map(|u| ExtractedUrlRow {
                        validated: (u.fully_resolved || options.keep_unresolved)
                            && u.package
                                .as_ref()
                                .is_some_and(|p| validate(p, &registry).unwrap_or(false)),
                        record: u.clone(),
                    })
                    .collect(),
                diagnostics: head.diagnostics.clone(),
            });
        }
        head_urls.push((s.id.as_str(), urls));
    }
    let (domains, domain_diags) =
        domain_histogram(head_urls.iter().map(|(r, u)| (*r, u.iter().copied())));
    outcome
        .warnings
        .extend(domain_diags.into_iter().map(|d| d.message));

    errors.sort_by(|a, b| a.repo.cmp(&b.repo));
    outcome
        .errors
        .extend(errors.iter().map(|e| format!("{}: {}", e.repo, e.message)));
    let out = &config.out;
    write_json(&out.join(EXTRACTION), &extraction)?;
    write_json(&out.join(DOMAINS), &domains)?;
    write_text(&out.join(REGISTRY), &registry.to_json())?;
    write_json(&out.join(TIMELINES), &TimelinesArtifact { repos, errors })?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRow {
    pub category: String,
    pub count: usize,
    pub percent: f64,
}

fn tally<T: Copy + Eq>(all: &[T], items: &[T], label: impl Fn(T) -> &'static str) -> Vec<TallyRow> {
    let total = items.len();
    all.iter()
        .map(|c| {
            let count = items.iter().filter(|i| *i == c).count();
            let percent = if total == 0 {
                0.0
            } else {
                (count as f64 * 1000.0 / total as f64).round() / 10.0
            };
            TallyRow {
                category: label(*c).to_string(),
                count,
                percent,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DockerfileRow {
    pub repo: String,
    pub path: String,
    pub status: DockerfileStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoRow {
    pub repo: String,
    pub status: RepoStatus,
    pub dockerfiles: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub repo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationArtifact {
    pub cutoff: DateTime<Utc>,
    pub precedence: Vec<DockerfileStatus>,
    pub dockerfiles: Vec<DockerfileRow>,
    pub repos: Vec<RepoRow>,
    pub excluded: Vec<ExcludedRow>,
    pub dockerfile_table: Vec<TallyRow>,
    pub repo_table: Vec<TallyRow>,
}

fn exclusion_reason(t: &crate::history::DockerfileTimeline) -> &'static str {
    match t.head() {
        None => "deleted before HEAD",
        Some(h) if !h.valid => "does not parse at HEAD",
        Some(_) => "never pinned a validated package",
    }
}

pub fn classify(config: &RunConfig) -> Result<StageOutcome, PipelineError> {
    let timelines: TimelinesArtifact = read_json(&config.out.join(TIMELINES))?;
    let artifact = classify_timelines(&timelines, config.cutoff);
    write_json(&config.out.join(CLASSIFICATION), &artifact)?;
    write_text(
        &config.out.join(CLASSIFICATION_TXT),
        &render_classification(&artifact),
    )?;
    Ok(StageOutcome::default())
}

pub fn classify_timelines(
    timelines: &TimelinesArtifact,
    cutoff: DateTime<Utc>,
) -> ClassificationArtifact {
    let mut dockerfiles = Vec::new();
    let mut repos = Vec::new();
    let mut excluded = Vec::new();
    for repo in &timelines.repos {
        let mut statuses = Vec::new();
        for t in &repo.timelines {
            if !t.is_analyzed() {
                excluded.push(ExcludedRow {
                    repo: repo.repo.clone(),
                    path: Some(t.path.clone()),
                    reason: exclusion_reason(t).into(),
                });
                continue;
            }
            let last = repo
                .last_commit
                .expect("a repository with files has a HEAD commit");
            let status = classify_dockerfile(t, last, cutoff);
            statuses.push(status);
            dockerfiles.push(DockerfileRow {
                repo: repo.repo.clone(),
                path: t.path.clone(),
                status,
            });
        }
        if statuses.is_empty() {
            excluded.push(ExcludedRow {
                repo: repo.repo.clone(),
                path: None,
                reason: "no analyzed Dockerfiles".into(),
            });
            continue;
        }
        let (status, _) = classify_repo(&statuses);
        repos.push(RepoRow {
            repo: repo.repo.clone(),
            status,
            dockerfiles: statuses.len(),
        });
    }
    dockerfiles.sort_by(|a, b| (&a.repo, &a.path).cmp(&(&b.repo, &b.path)));
    repos.sort_by(|a, b| a.repo.cmp(&b.repo));
    excluded.sort_by(|a, b| (&a.repo, &a.path).cmp(&(&b.repo, &b.path)));
    let statuses: Vec<_> = dockerfiles.iter().map(|d| d.status).collect();
    let repo_statuses: Vec<_> = repos.iter().map(|r| r.status).collect();
    ClassificationArtifact {
        cutoff,
        precedence: vec![
            DockerfileStatus::Dormant,
            DockerfileStatus::AllPackagesDeleted,
            DockerfileStatus::MultipleVersions,
            DockerfileStatus::PackageUpdated,
            DockerfileStatus::NoPackageUpdated,
        ],
        dockerfile_table: tally(&DockerfileStatus::ALL, &statuses, DockerfileStatus::label),
        repo_table: tally(&RepoStatus::ALL, &repo_statuses, RepoStatus::label),
        dockerfiles,
        repos,
        excluded,
    }
}

fn render_table(out: &mut String, title: &str, rows: &[TallyRow]) {
    let total: usize = rows.iter().map(|r| r.count).sum();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<24} {:>7} {:>8}", "category", "count", "percent");
    for r in rows {
        let _ = writeln!(out, "{:<24} {:>7} {:>7.1}%", r.category, r.count, r.percent);
    }
    let pct = if total == 0 { 0.0 } else { 100.0 };
    let _ = writeln!(out, "{:<24} {:>7} {:>7.1}%", "total", total, pct);
}

pub fn render_classification(c: &ClassificationArtifact) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Dormancy cutoff: {}", c.cutoff.format("%Y-%m-%d"));
    let order: Vec<&str> = c.precedence.iter().map(|s| s.label()).collect();
    let _ = writeln!(out, "Status precedence: {}\n", order.join(" > "));
    render_table(
        &mut out,
        "Dockerfiles by version-pinned package status",
        &c.dockerfile_table,
    );
    out.push('\n');
    render_table(&mut out, "Repositories by Dockerfile status", &c.repo_table);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRow {
    pub id: String,
    pub set: PackageSet,
    pub class: GroupClass,
    pub members: Vec<GroupMember>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsArtifact {
    pub groups: Vec<GroupRow>,
    pub group_table: Vec<TallyRow>,
}

pub fn groups(config: &RunConfig) -> Result<StageOutcome, PipelineError> {
    let timelines: TimelinesArtifact = read_json(&config.out.join(TIMELINES))?;
    let classification: ClassificationArtifact = read_json(&config.out.join(CLASSIFICATION))?;
    let registry = load_fixture(&config.out.join(REGISTRY))
        .map_err(|e| PipelineError::Usage(e.to_string()))?;
    let artifact = config
        .pool()?
        .install(|| build_groups(&timelines, &classification, &registry));
    write_json(&config.out.join(GROUPS), &artifact)?;
    Ok(StageOutcome::default())
}

pub fn build_groups(
    timelines: &TimelinesArtifact,
    classification: &ClassificationArtifact,
    registry: &RegistrySnapshot,
) -> GroupsArtifact {
    let eligible: BTreeMap<String, RepoStatus> = classification
        .repos
        .iter()
        .filter(|r| r.status != RepoStatus::Other)
        .map(|r| (r.repo.clone(), r.status))
        .collect();
    let all: Vec<_> = timelines
        .repos
        .iter()
        .flat_map(|r| r.timelines.iter().cloned())
        .collect();
    let groups: Vec<GroupRow> = find_package_sets(&all, &eligible, registry)
        .into_par_iter()
        .map(|mut g| {
            let class = classify_group(&g);
            g.classification = Some(class);
            GroupRow {
                id: g.set.slug(),
                metrics: (class == GroupClass::Comparable)
                    .then(|| group_metrics(&g, registry))
                    .flatten(),
                set: g.set,
                class,
                members: g.members,
            }
        })
        .collect();
    let classes: Vec<GroupClass> = groups.iter().map(|g| g.class).collect();
    GroupsArtifact {
        group_table: tally(&GroupClass::ALL, &classes, GroupClass::label),
        groups,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    #[serde(flatten)]
    pub recommendation: Recommendation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationIndex {
    pub recommendations: Vec<IndexRow>,
}

pub fn recommend(config: &RunConfig) -> Result<StageOutcome, PipelineError> {
    let timelines: TimelinesArtifact = read_json(&config.out.join(TIMELINES))?;
    let groups: GroupsArtifact = read_json(&config.out.join(GROUPS))?;
    let registry = load_fixture(&config.out.join(REGISTRY))
        .map_err(|e| PipelineError::Usage(e.to_string()))?;
    let advisories = match &config.advisories {
        Some(p) => Advisories::load(p).map_err(|e| PipelineError::Usage(e.to_string()))?,
        None => Advisories::default(),
    };
    let texts: BTreeMap<(String, String), String> = timelines
        .repos
        .iter()
        .flat_map(|r| &r.timelines)
        .filter_map(|t| Some(((t.repo.clone(), t.path.clone()), t.latest_text.clone()?)))
        .collect();
    let ctx = PlanContext {
        registry: &registry,
        advisories: &advisories,
        texts: &texts,
        parse: config.parse_options(),
    };
    let recs: Vec<Recommendation> = config.pool()?.install(|| {
        groups
            .groups
            .par_iter()
            .filter(|g| g.class == GroupClass::Comparable)
            .map(|g| {
                let group = crate::metamaint::RepoGroup {
                    set: g.set.clone(),
                    members: g.members.clone(),
                    classification: Some(g.class),
                };
                plan_updates(&group, &ctx).unwrap_or_default()
            })
            .flatten()
            .collect()
    });

    let dir = config.out.join(RECOMMENDATIONS);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|source| PipelineError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut outcome = StageOutcome::default();
    let mut rows = Vec::new();
    for rec in recs {
        let base = format!("{}/{}", rec.target.repo, rec.target.dockerfile);
        let message = format!("{base}.message.md");
        write_text(&dir.join(&message), &rec.message)?;
        let patch = if rec.has_patch() {
            let p = format!("{base}.patch");
            write_text(&dir.join(&p), &rec.patch())?;
            Some(p)
        } else {
            None
        };
        if rec.status == RecommendationStatus::Error {
            outcome
                .warnings
                .push(format!("{base}: {}", rec.notes.join("; ")));
        }
        rows.push(IndexRow {
            recommendation: rec,
            patch,
            message,
        });
    }
    rows.sort_by(|a, b| {
        let key = |r: &IndexRow| {
            (
                r.recommendation.group.clone(),
                r.recommendation.target.repo.clone(),
                r.recommendation.target.dockerfile.clone(),
            )
        };
        key(a).cmp(&key(b))
    });
    write_json(
        &dir.join("index.json"),
        &RecommendationIndex {
            recommendations: rows,
        },
    )?;
    Ok(outcome)
}

/// Human-readable summary of every stage's artifacts present in `out`.
pub fn report(config: &RunConfig) -> Result<String, PipelineError> {
    let classification: ClassificationArtifact = read_json(&config.out.join(CLASSIFICATION))?;
    let mut out = render_classification(&classification);
    let groups_path = config.out.join(GROUPS);
    if groups_path.exists() {
        let groups: GroupsArtifact = read_json(&groups_path)?;
        out.push('\n');
        render_table(&mut out, "Package sets by group class", &groups.group_table);
        if groups.groups.iter().any(|g| g.metrics.is_some()) {
            let _ = writeln!(out, "\nComparable groups");
            let _ = writeln!(
                out,
                "{:<48} {:>8} {:>12} {:>8}",
                "package set", "members", "with diffs", "max diff"
            );
            for g in groups.groups.iter().filter(|g| g.metrics.is_some()) {
                let m = g.metrics.expect("filtered");
                let _ = writeln!(
                    out,
                    "{:<48} {:>8} {:>12} {:>8}",
                    g.set.to_string(),
                    g.members.len(),
                    m.repos_with_differences,
                    m.max_version_difference
                );
            }
        }
    }
    let index_path = config.out.join(RECOMMENDATIONS).join("index.json");
    if index_path.exists() {
        let index: RecommendationIndex = read_json(&index_path)?;
        let _ = writeln!(out, "\nRecommendations");
        for row in &index.recommendations {
            let r = &row.recommendation;
            let moves: Vec<String> = r
                .changes
                .iter()
                .map(|c| format!("{} {} -> {}", c.identity, c.from_tag, c.to_tag))
                .collect();
            let status = serde_json::to_value(r.status).expect("status serializes");
            let _ = writeln!(
                out,
                "{:<13} {}/{}: {}",
                status.as_str().unwrap_or_default(),
                r.target.repo,
                r.target.dockerfile,
                moves.join(", ")
            );
        }
    }
    write_text(&config.out.join(REPORT_TXT), &out)?;
    Ok(out)
}
