//! GitHub REST client for tag and release lists, with a per-day disk cache.
//!
//! Requests are issued one at a time. Rate-limit responses (403/429) are
//! retried with exponential backoff; other failures are recorded per
//! identity and never replaced by made-up data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use serde::Deserialize;

use super::order::sort_tags;
use super::{PackageEntry, RegistrySnapshot};
use crate::pkgid::PackageIdentity;

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
/// Environment variable holding an API token.
pub const TOKEN_ENV: &str = "GITHUB_TOKEN";
/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "METAPIN_CACHE_DIR";

const PER_PAGE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport {
    fn get(&mut self, url: &str, token: Option<&str>) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("metapin/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn get(&mut self, url: &str, token: Option<&str>) -> Result<HttpResponse, String> {
        let mut req = self
            .client
            .get(url)
            .header("Accept", "application/vnd.github+json");
        if let Some(token) = token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("repository not found")]
    NotFound,
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("HTTP status {0}")]
    Http(u16),
    #[error("network error: {0}")]
    Network(String),
    #[error("unexpected response body: {0}")]
    Decode(String),
}

#[derive(Debug, Default)]
pub struct LiveResult {
    pub snapshot: RegistrySnapshot,
    pub errors: BTreeMap<PackageIdentity, FetchError>,
}

#[derive(Deserialize)]
struct TagItem {
    name: String,
}

#[derive(Deserialize)]
struct ReleaseItem {
    #[serde(default)]
    assets: Vec<AssetItem>,
}

#[derive(Deserialize)]
struct AssetItem {
    browser_download_url: String,
}

pub struct LiveFetcher<T: HttpTransport> {
    transport: T,
    token: Option<String>,
    api_base: String,
    cache_dir: Option<PathBuf>,
    today: NaiveDate,
    now: DateTime<Utc>,
    max_attempts: u32,
    base_delay: Duration,
    sleeper: Box<dyn FnMut(Duration) + Send>,
    requests: usize,
}

impl<T: HttpTransport> LiveFetcher<T> {
    pub fn new(transport: T) -> Self {
        let now = Utc::now();
        Self {
            transport,
            token: None,
            api_base: DEFAULT_API_BASE.to_string(),
            cache_dir: None,
            today: now.date_naive(),
            now,
            max_attempts: 5,
            base_delay: Duration::from_secs(2),
            sleeper: Box::new(std::thread::sleep),
            requests: 0,
        }
    }

    pub fn token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn api_base(mut self, base: impl Into<String>) -> Self {
        self.api_base = base.into().trim_end_matches('/').to_string();
        self
    }

    pub fn cache_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.cache_dir = dir;
        self
    }

    /// Fixes the clock (cache day and `fetched_at`).
    pub fn clock(mut self, now: DateTime<Utc>) -> Self {
        self.now = now;
        self.today = now.date_naive();
        self
    }

    pub fn backoff(mut self, max_attempts: u32, base_delay: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.base_delay = base_delay;
        self
    }

    pub fn sleeper(mut self, sleeper: impl FnMut(Duration) + Send + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    /// Number of HTTP requests issued so far.
    pub fn requests(&self) -> usize {
        self.requests
    }

    pub fn fetch(&mut self, identities: &BTreeSet<PackageIdentity>) -> LiveResult {
        let mut result = LiveResult::default();
        for identity in identities {
            if let Some(entry) = self.read_cache(identity) {
                result.snapshot.insert(identity.clone(), entry);
                continue;
            }
            match self.fetch_one(identity) {
                Ok(entry) => {
                    self.write_cache(identity, &entry);
                    result.snapshot.insert(identity.clone(), entry);
                }
                Err(e) => {
                    log::warn!("{identity}: {e}");
                    result.errors.insert(identity.clone(), e);
                }
            }
        }
        result
    }

    fn fetch_one(&mut self, identity: &PackageIdentity) -> Result<PackageEntry, FetchError> {
        let base = format!(
            "{}/repos/{}/{}",
            self.api_base,
            identity.owner(),
            identity.repo()
        );
        let mut tags = Vec::new();
        for page in 1.. {
            let items: Vec<TagItem> =
                self.get_json(&format!("{base}/tags?per_page={PER_PAGE}&page={page}"))?;
            let n = items.len();
            tags.extend(items.into_iter().map(|t| t.name));
            if n < PER_PAGE {
                break;
            }
        }
        let mut assets = BTreeSet::new();
        for page in 1.. {
            let items: Vec<ReleaseItem> =
                self.get_json(&format!("{base}/releases?per_page={PER_PAGE}&page={page}"))?;
            let n = items.len();
            for release in items {
                assets.extend(release.assets.into_iter().map(|a| a.browser_download_url));
            }
            if n < PER_PAGE {
                break;
            }
        }
        sort_tags(&mut tags);
        PackageEntry::new(tags, assets, Some(self.now)).map_err(FetchError::Decode)
    }

    fn get_json<D: serde::de::DeserializeOwned>(&mut self, url: &str) -> Result<D, FetchError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.requests += 1;
            let outcome = self.transport.get(url, self.token.as_deref());
            let retry = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body)
                        .map_err(|e| FetchError::Decode(e.to_string()));
                }
                Ok(resp) if resp.status == 404 => return Err(FetchError::NotFound),
                Ok(resp) if resp.status == 403 || resp.status == 429 => {
                    FetchError::RateLimited(attempt)
                }
                Ok(resp) => return Err(FetchError::Http(resp.status)),
                Err(e) => FetchError::Network(e),
            };
            if attempt >= self.max_attempts {
                return Err(retry);
            }
            let delay = self.base_delay * 2u32.saturating_pow(attempt - 1);
            (self.sleeper)(delay);
        }
    }

    fn cache_path(&self, identity: &PackageIdentity) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        Some(
            dir.join(identity.owner())
                .join(identity.repo())
                .join(format!("{}.json", self.today.format("%Y-%m-%d"))),
        )
    }

    fn read_cache(&self, identity: &PackageIdentity) -> Option<PackageEntry> {
        let path = self.cache_path(identity)?;
        let text = std::fs::read_to_string(&path).ok()?;
        let snapshot = RegistrySnapshot::from_json(&text, &path).ok()?;
        snapshot.get(identity).cloned()
    }

    fn write_cache(&self, identity: &PackageIdentity, entry: &PackageEntry) {
        let Some(path) = self.cache_path(identity) else {
            return;
        };
        let mut single = RegistrySnapshot::new();
        single.insert(identity.clone(), entry.clone());
        let written = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|()| std::fs::write(&path, single.to_json()));
        if let Err(e) = written {
            log::warn!("could not write cache {}: {e}", path.display());
        }
    }
}

/// Default cache location: `$METAPIN_CACHE_DIR`, else `$XDG_CACHE_HOME/metapin`,
/// else `~/.cache/metapin`.
pub fn default_cache_dir() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return Some(PathBuf::from(dir));
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return Some(PathBuf::from(dir).join("metapin"));
    }
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("metapin"))
}

/// Fetches tag and release lists for `identities` from the GitHub API.
pub fn fetch_live(
    identities: &BTreeSet<PackageIdentity>,
    credentials: Option<String>,
    cache_dir: Option<PathBuf>,
) -> Result<LiveResult, String> {
    let transport = ReqwestTransport::new()?;
    let mut fetcher = LiveFetcher::new(transport)
        .token(credentials)
        .cache_dir(cache_dir);
    Ok(fetcher.fetch(identities))
}
