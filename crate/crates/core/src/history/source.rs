//! Where Dockerfile histories come from: git checkouts or a JSON export.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::dockerfile::is_dockerfile_name;

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("{0}: not a git repository")]
    NotARepository(PathBuf),
    #[error("{repo}: git {command} failed: {message}")]
    Git {
        repo: String,
        command: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitInfo {
    pub id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Added,
    Modified,
    Deleted,
    /// Content moved from `old_path`; the new content is attached.
    Renamed,
}

/// One change to a Dockerfile-named file on the first-parent chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEvent {
    pub commit: CommitInfo,
    pub kind: ChangeKind,
    pub path: String,
    pub old_path: Option<String>,
    /// File content after the change (`None` for deletions).
    pub content: Option<Vec<u8>>,
}

/// The Dockerfile history of one repository, oldest event first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoHistory {
    pub id: String,
    pub head: Option<CommitInfo>,
    pub events: Vec<FileEvent>,
}

/// A repository in the corpus, not yet read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepoSource {
    Git { id: String, path: PathBuf },
    Export(ExportedRepo),
}

impl RepoSource {
    pub fn id(&self) -> &str {
        match self {
            RepoSource::Git { id, .. } => id,
            RepoSource::Export(r) => &r.id,
        }
    }

    pub fn load(&self) -> Result<RepoHistory, HistoryError> {
        match self {
            RepoSource::Git { id, path } => git_history(id, path),
            RepoSource::Export(r) => Ok(r.to_history()),
        }
    }
}

/// Lists the repositories of a corpus: either a directory whose
/// subdirectories are git checkouts (bare or not), or a history export file.
pub fn discover_corpus(corpus: &Path) -> Result<Vec<RepoSource>, HistoryError> {
    let io_err = |source| HistoryError::Io {
        path: corpus.to_path_buf(),
        source,
    };
    if corpus.is_file() {
        let export = HistoryExport::load(corpus)?;
        return Ok(export.repos.into_iter().map(RepoSource::Export).collect());
    }
    let mut repos = Vec::new();
    for entry in std::fs::read_dir(corpus).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let id = name.strip_suffix(".git").unwrap_or(&name).to_string();
        repos.push(RepoSource::Git { id, path });
    }
    repos.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(repos)
}

/// Pre-exported history, oldest commit first per repository.
///
/// ```json
/// { "repos": [ { "id": "name", "commits": [
///     { "id": "c1", "timestamp": "2021-01-01T00:00:00Z",
///       "files": { "Dockerfile": "FROM ...", "old.Dockerfile": null },
///       "renames": { "new/Dockerfile": "Dockerfile" } } ] } ] }
/// ```
///
/// `files` maps a path to its new content, or `null` for a deletion.
/// `renames` maps a new path to the path it was moved from; the new path's
/// content must also appear in `files`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryExport {
    pub repos: Vec<ExportedRepo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedRepo {
    pub id: String,
    pub commits: Vec<ExportedCommit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedCommit {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default)]
    pub files: BTreeMap<String, Option<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub renames: BTreeMap<String, String>,
}

impl HistoryExport {
    pub fn load(path: &Path) -> Result<Self, HistoryError> {
        let text = std::fs::read_to_string(path).map_err(|source| HistoryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HistoryError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl ExportedRepo {
    pub fn to_history(&self) -> RepoHistory {
        let mut events = Vec::new();
        for commit in &self.commits {
            let info = CommitInfo {
                id: commit.id.clone(),
                timestamp: commit.timestamp,
            };
            let renamed_from: BTreeMap<&str, &str> = commit
                .renames
                .iter()
                .map(|(new, old)| (old.as_str(), new.as_str()))
                .collect();
            for (old, new) in &renamed_from {
                let content = commit.files.get(*new).cloned().flatten();
                events.extend(classify_rename(
                    &info,
                    old,
                    new,
                    content.map(String::into_bytes),
                ));
            }
            for (path, content) in &commit.files {
                if commit.renames.contains_key(path) || renamed_from.contains_key(path.as_str()) {
                    continue;
                }
                if !is_dockerfile_name(path) {
                    continue;
                }
                let kind = match content {
                    None => ChangeKind::Deleted,
                    Some(_) if self.existed_before(commit, path) => ChangeKind::Modified,
                    Some(_) => ChangeKind::Added,
                };
                events.push(FileEvent {
                    commit: info.clone(),
                    kind,
                    path: path.clone(),
                    old_path: None,
                    content: content.clone().map(String::into_bytes),
                });
            }
        }
        RepoHistory {
            id: self.id.clone(),
            head: self.commits.last().map(|c| CommitInfo {
                id: c.id.clone(),
                timestamp: c.timestamp,
            }),
            events,
        }
    }

    fn existed_before(&self, commit: &ExportedCommit, path: &str) -> bool {
        let mut exists = false;
        for c in &self.commits {
            if std::ptr::eq(c, commit) {
                break;
            }
            if let Some(content) = c.files.get(path) {
                exists = content.is_some();
            }
            if c.renames.values().any(|old| old == path) {
                exists = false;
            }
        }
        exists
    }
}

/// Turns a rename into events, accounting for names that stop or start
/// matching the Dockerfile pattern.
fn classify_rename(
    commit: &CommitInfo,
    old: &str,
    new: &str,
    content: Option<Vec<u8>>,
) -> Vec<FileEvent> {
    match (is_dockerfile_name(old), is_dockerfile_name(new)) {
        (true, true) => vec![FileEvent {
            commit: commit.clone(),
            kind: ChangeKind::Renamed,
            path: new.to_string(),
            old_path: Some(old.to_string()),
            content,
        }],
        (true, false) => vec![FileEvent {
            commit: commit.clone(),
            kind: ChangeKind::Deleted,
            path: old.to_string(),
            old_path: None,
            content: None,
        }],
        (false, true) => vec![FileEvent {
            commit: commit.clone(),
            kind: ChangeKind::Added,
            path: new.to_string(),
            old_path: None,
            content,
        }],
        (false, false) => Vec::new(),
    }
}

fn git(repo_id: &str, dir: &Path, args: &[&str]) -> Result<Vec<u8>, HistoryError> {
    let output = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "core.quotepath=off"])
        .args(args)
        .output()
        .map_err(|source| HistoryError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    if !output.status.success() {
        return Err(HistoryError::Git {
            repo: repo_id.to_string(),
            command: args.first().copied().unwrap_or_default().to_string(),
            message: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    Ok(output.stdout)
}

fn parse_commit_header(line: &str) -> Option<CommitInfo> {
    let (id, ts) = line.split_once('\t')?;
    let secs: i64 = ts.trim().parse().ok()?;
    Some(CommitInfo {
        id: id.to_string(),
        timestamp: Utc.timestamp_opt(secs, 0).single()?,
    })
}

/// Reads the first-parent history of the checked-out (or bare) default
/// branch at `dir`.
pub fn git_history(repo_id: &str, dir: &Path) -> Result<RepoHistory, HistoryError> {
    if !dir.is_dir() {
        return Err(HistoryError::NotARepository(dir.to_path_buf()));
    }
    git(repo_id, dir, &["rev-parse", "--git-dir"])
        .map_err(|_| HistoryError::NotARepository(dir.to_path_buf()))?;
    // an empty repository has no HEAD commit
    let head_out = match git(repo_id, dir, &["log", "-1", "--format=%H%x09%ct", "HEAD"]) {
        Ok(out) => out,
        Err(_) => {
            return Ok(RepoHistory {
                id: repo_id.to_string(),
                head: None,
                events: Vec::new(),
            })
        }
    };
    let head = parse_commit_header(String::from_utf8_lossy(&head_out).trim());

    let log = git(
        repo_id,
        dir,
        &[
            "log",
            "--first-parent",
            "--diff-merges=first-parent",
            "--reverse",
            "--find-renames",
            "--name-status",
            "--format=%x01%H%x09%ct",
            "HEAD",
        ],
    )?;
    let log = String::from_utf8_lossy(&log);
    let mut pending: Vec<FileEvent> = Vec::new();
    let mut current: Option<CommitInfo> = None;
    for line in log.lines() {
        if let Some(header) = line.strip_prefix('\u{1}') {
            current = parse_commit_header(header);
            continue;
        }
        let Some(commit) = &current else { continue };
        let mut fields = line.split('\t');
        let Some(status) = fields.next().filter(|s| !s.is_empty()) else {
            continue;
        };
        let first = fields.next();
        let second = fields.next();
        match (status.as_bytes()[0], first, second) {
            (b'R', Some(old), Some(new)) => pending.extend(classify_rename(commit, old, new, None)),
            (b'C', Some(_), Some(new)) if is_dockerfile_name(new) => pending.push(FileEvent {
                commit: commit.clone(),
                kind: ChangeKind::Added,
                path: new.to_string(),
                old_path: None,
                content: None,
            }),
            (b'D', Some(path), _) if is_dockerfile_name(path) => pending.push(FileEvent {
                commit: commit.clone(),
                kind: ChangeKind::Deleted,
                path: path.to_string(),
                old_path: None,
                content: None,
            }),
            (b'A', Some(path), _) if is_dockerfile_name(path) => pending.push(FileEvent {
                commit: commit.clone(),
                kind: ChangeKind::Added,
                path: path.to_string(),
                old_path: None,
                content: None,
            }),
            (b'M' | b'T', Some(path), _) if is_dockerfile_name(path) => pending.push(FileEvent {
                commit: commit.clone(),
                kind: ChangeKind::Modified,
                path: path.to_string(),
                old_path: None,
                content: None,
            }),
            _ => {}
        }
    }

    let wanted: Vec<String> = pending
        .iter()
        .filter(|e| e.kind != ChangeKind::Deleted)
        .map(|e| format!("{}:{}", e.commit.id, e.path))
        .collect();
    let mut blobs = cat_file_batch(repo_id, dir, &wanted)?.into_iter();
    for event in pending.iter_mut().filter(|e| e.kind != ChangeKind::Deleted) {
        event.content = blobs.next().flatten();
    }
    Ok(RepoHistory {
        id: repo_id.to_string(),
        head,
        events: pending,
    })
}

/// Reads many `rev:path` objects through one `git cat-file --batch` process.
fn cat_file_batch(
    repo_id: &str,
    dir: &Path,
    specs: &[String],
) -> Result<Vec<Option<Vec<u8>>>, HistoryError> {
    if specs.is_empty() {
        return Ok(Vec::new());
    }
    let io_err = |source| HistoryError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut child = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["cat-file", "--batch"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(io_err)?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let input: String = specs.iter().map(|s| format!("{s}\n")).collect();
    let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
    let mut reader = BufReader::new(child.stdout.take().expect("piped stdout"));
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut header = String::new();
        reader.read_line(&mut header).map_err(io_err)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        match fields.as_slice() {
            [_, "blob", size] => {
                let size: usize = size.parse().map_err(|_| HistoryError::Git {
                    repo: repo_id.to_string(),
                    command: "cat-file".to_string(),
                    message: format!("bad header {header:?}"),
                })?;
                let mut buf = vec![0u8; size + 1];
                reader.read_exact(&mut buf).map_err(io_err)?;
                buf.pop();
                out.push(Some(buf));
            }
            [_, kind, size] => {
                // not a blob (submodule, tree): skip its body
                let size: usize = size.parse().unwrap_or(0);
                let mut buf = vec![0u8; size + 1];
                reader.read_exact(&mut buf).map_err(io_err)?;
                log::warn!("{repo_id}: {spec} is a {kind}, not a file");
                out.push(None);
            }
            _ => out.push(None),
        }
    }
    writer.join().expect("writer thread").map_err(io_err)?;
    child.wait().map_err(io_err)?;
    Ok(out)
}

impl ExportedRepo {
    /// Replays the export as real commits in a new git repository at `dir`,
    /// with author and committer dates taken from the export.
    pub fn write_git_repo(&self, dir: &Path) -> Result<(), HistoryError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HistoryError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        git(&self.id, dir, &["init", "-q", "-b", "main"])?;
        for commit in &self.commits {
            for (new, old) in &commit.renames {
                if let Some(parent) = dir.join(new).parent() {
                    std::fs::create_dir_all(parent).map_err(io_err(parent))?;
                }
                git(&self.id, dir, &["mv", old, new])?;
            }
            for (path, content) in &commit.files {
                let full = dir.join(path);
                match content {
                    Some(text) => {
                        if let Some(parent) = full.parent() {
                            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
                        }
                        std::fs::write(&full, text).map_err(io_err(&full))?;
                    }
                    None => {
                        if full.exists() {
                            std::fs::remove_file(&full).map_err(io_err(&full))?;
                        }
                    }
                }
            }
            git(&self.id, dir, &["add", "-A"])?;
            let date = commit.timestamp.to_rfc3339();
            let message = commit.message.clone().unwrap_or_else(|| commit.id.clone());
            let output = Command::new("git")
                .arg("-C")
                .arg(dir)
                .args([
                    "-c",
                    "user.name=Corpus Author",
                    "-c",
                    "user.email=author@example.com",
                    "-c",
                    "commit.gpgsign=false",
                    "commit",
                    "-q",
                    "--allow-empty",
                    "-m",
                    &message,
                ])
                .env("GIT_AUTHOR_DATE", &date)
                .env("GIT_COMMITTER_DATE", &date)
                .output()
                .map_err(io_err(dir))?;
            if !output.status.success() {
                return Err(HistoryError::Git {
                    repo: self.id.clone(),
                    command: "commit".into(),
                    message: String::from_utf8_lossy(&output.stderr).trim().to_string(),
                });
            }
        }
        Ok(())
    }
}

impl HistoryExport {
    /// Writes every repository under `root/<id>`.
    pub fn write_git_corpus(&self, root: &Path) -> Result<(), HistoryError> {
        for repo in &self.repos {
            repo.write_git_repo(&root.join(&repo.id))?;
        }
        Ok(())
    }
}
