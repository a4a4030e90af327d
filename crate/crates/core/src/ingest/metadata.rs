//! Hosting metadata: popularity and engagement counters, read from a local
//! fixture or aggregated from a paginated REST endpoint.
//!
//! The REST layout follows the common forge convention: for a base URL `B`
//! and slug `owner/name`, each counter is the number of array entries served
//! by `B/repos/owner/name/<resource>?per_page=N&page=P`, following
//! `Link: <...>; rel="next"` when present and otherwise paging until a short
//! page. Issues come from `issues?state=all`, skipping entries that carry a
//! `pull_request` key, and are split by their `state` field.

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("network failure for {url}: {message}")]
    NetworkFailure { url: String, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("rate limit still in effect after {retries} retries for {url}")]
    RateLimitExceeded { url: String, retries: u32 },
    #[error("cannot read metadata fixture {path}: {message}")]
    Unreadable { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostingMetadata {
    pub repo_id: String,
    pub watch: u64,
    pub star: u64,
    pub fork_count: u64,
    pub issues_total: u64,
    pub issues_open: u64,
    pub issues_closed: u64,
    pub branches: u64,
    pub releases: u64,
    pub pull_requests: u64,
    /// Unix seconds when the counters were read.
    pub fetched_at: i64,
}

#[derive(Debug, Deserialize)]
struct MetadataFixture {
    #[serde(default)]
    repo_id: Option<String>,
    #[serde(default)]
    watch: u64,
    #[serde(default)]
    star: u64,
    #[serde(default, alias = "fork")]
    fork_count: u64,
    #[serde(default)]
    issues_total: Option<u64>,
    #[serde(default)]
    issues_open: u64,
    #[serde(default)]
    issues_closed: u64,
    #[serde(default)]
    branches: u64,
    #[serde(default)]
    releases: u64,
    #[serde(default)]
    pull_requests: u64,
    #[serde(default)]
    fetched_at: Option<i64>,
}

fn now_secs() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

/// Parses a flat metadata object. `issues_total` is derived when absent and
/// must equal open + closed when present. `fetched_at` defaults to now.
pub fn parse_metadata_fixture(text: &str, repo_id: &str) -> Result<HostingMetadata, MetadataError> {
    let f: MetadataFixture =
        serde_json::from_str(text).map_err(|e| MetadataError::SchemaMismatch(e.to_string()))?;
    let sum = f.issues_open + f.issues_closed;
    if let Some(total) = f.issues_total {
        if total != sum {
            return Err(MetadataError::SchemaMismatch(format!(
                "issues_total {total} != issues_open {} + issues_closed {}",
                f.issues_open, f.issues_closed
            )));
        }
    }
    Ok(HostingMetadata {
        repo_id: f.repo_id.unwrap_or_else(|| repo_id.to_string()),
        watch: f.watch,
        star: f.star,
        fork_count: f.fork_count,
        issues_total: sum,
        issues_open: f.issues_open,
        issues_closed: f.issues_closed,
        branches: f.branches,
        releases: f.releases,
        pull_requests: f.pull_requests,
        fetched_at: f.fetched_at.unwrap_or_else(now_secs),
    })
}

pub fn load_metadata_fixture(path: &Path, repo_id: &str) -> Result<HostingMetadata, MetadataError> {
    let text = fs::read_to_string(path).map_err(|e| MetadataError::Unreadable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_metadata_fixture(&text, repo_id)
}

/// Retry behaviour for rate limits and transient failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let backoff = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        hint.unwrap_or(backoff).min(self.max_delay)
    }
}

/// REST client for one endpoint. Requests are serialized per client.
pub struct MetadataClient {
    base: String,
    agent: ureq::Agent,
    policy: RetryPolicy,
    per_page: usize,
    token: Option<String>,
    gate: Mutex<()>,
}

impl MetadataClient {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        MetadataClient {
            base: base.into().trim_end_matches('/').to_string(),
            agent,
            policy: RetryPolicy::default(),
            per_page: 100,
            token: None,
            gate: Mutex::new(()),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_per_page(mut self, per_page: usize) -> Self {
        self.per_page = per_page.max(1);
        self
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn get_json(&self, url: &str) -> Result<(serde_json::Value, Option<String>), MetadataError> {
        let _guard = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        let mut attempt = 0u32;
        loop {
            let mut req = self.agent.get(url).header("Accept", "application/json");
            if let Some(t) = &self.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            let outcome = req.call();
            let retry_hint;
            match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let header = |name: &str| {
                        resp.headers()
                            .get(name)
                            .and_then(|v| v.to_str().ok())
                            .map(str::to_string)
                    };
                    let limited = status == 429
                        || (status == 403 && header("x-ratelimit-remaining").as_deref() == Some("0"));
                    if limited {
                        retry_hint = header("retry-after")
                            .and_then(|s| s.trim().parse::<u64>().ok())
                            .map(Duration::from_secs);
                        if attempt >= self.policy.max_retries {
                            return Err(MetadataError::RateLimitExceeded {
                                url: url.to_string(),
                                retries: attempt,
                            });
                        }
                    } else if (500..600).contains(&status) {
                        retry_hint = None;
                        if attempt >= self.policy.max_retries {
                            return Err(MetadataError::NetworkFailure {
                                url: url.to_string(),
                                message: format!("HTTP {status} after {attempt} retries"),
                            });
                        }
                    } else if !(200..300).contains(&status) {
                        return Err(MetadataError::NetworkFailure {
                            url: url.to_string(),
                            message: format!("HTTP {status}"),
                        });
                    } else {
                        let link = header("link");
                        let body = resp.body_mut().read_to_string().map_err(|e| {
                            MetadataError::NetworkFailure {
                                url: url.to_string(),
                                message: e.to_string(),
                            }
                        })?;
                        let value = serde_json::from_str(&body)
                            .map_err(|e| MetadataError::SchemaMismatch(format!("{url}: {e}")))?;
                        return Ok((value, link));
                    }
                }
                Err(e) => {
                    retry_hint = None;
                    if attempt >= self.policy.max_retries {
                        return Err(MetadataError::NetworkFailure {
                            url: url.to_string(),
                            message: e.to_string(),
                        });
                    }
                }
            }
            thread::sleep(self.policy.delay(attempt, retry_hint));
            attempt += 1;
        }
    }

    /// Walks every page of `resource` and hands each array entry to `visit`.
    fn for_each_entry(
        &self,
        repo_id: &str,
        resource: &str,
        mut visit: impl FnMut(&serde_json::Value),
    ) -> Result<(), MetadataError> {
        let sep = if resource.contains('?') { '&' } else { '?' };
        let mut page = 1usize;
        let mut url = format!(
            "{}/repos/{repo_id}/{resource}{sep}per_page={}&page={page}",
            self.base, self.per_page
        );
        loop {
            let (value, link) = self.get_json(&url)?;
            let items = value.as_array().ok_or_else(|| {
                MetadataError::SchemaMismatch(format!("{url}: expected a JSON array"))
            })?;
            items.iter().for_each(&mut visit);
            match link.as_deref().and_then(next_link) {
                Some(next) => url = next,
                None if link.is_none() && items.len() >= self.per_page => {
                    page += 1;
                    url = format!(
                        "{}/repos/{repo_id}/{resource}{sep}per_page={}&page={page}",
                        self.base, self.per_page
                    );
                }
                None => return Ok(()),
            }
        }
    }

    fn count(&self, repo_id: &str, resource: &str) -> Result<u64, MetadataError> {
        let mut n = 0u64;
        self.for_each_entry(repo_id, resource, |_| n += 1)?;
        Ok(n)
    }

    pub fn fetch(&self, repo_id: &str) -> Result<HostingMetadata, MetadataError> {
        let (mut open, mut closed) = (0u64, 0u64);
        let mut bad_state = None;
        self.for_each_entry(repo_id, "issues?state=all", |item| {
            if item.get("pull_request").is_some() {
                return;
            }
            match item.get("state").and_then(|s| s.as_str()) {
                Some("open") => open += 1,
                Some("closed") => closed += 1,
                other => bad_state = Some(format!("issue state {other:?}")),
            }
        })?;
        if let Some(msg) = bad_state {
            return Err(MetadataError::SchemaMismatch(msg));
        }
        Ok(HostingMetadata {
            repo_id: repo_id.to_string(),
            watch: self.count(repo_id, "subscribers")?,
            star: self.count(repo_id, "stargazers")?,
            fork_count: self.count(repo_id, "forks")?,
            issues_total: open + closed,
            issues_open: open,
            issues_closed: closed,
            branches: self.count(repo_id, "branches")?,
            releases: self.count(repo_id, "releases")?,
            pull_requests: self.count(repo_id, "pulls?state=all")?,
            fetched_at: now_secs(),
        })
    }
}

fn next_link(header: &str) -> Option<String> {
    header.split(',').find_map(|part| {
        let (url, params) = part.split_once(';')?;
        if params.split(';').any(|p| p.trim() == "rel=\"next\"") {
            Some(url.trim().trim_start_matches('<').trim_end_matches('>').to_string())
        } else {
            None
        }
    })
}

/// Reads metadata from `endpoint`: an `http(s)://` base URL or a local
/// fixture path.
pub fn fetch_hosting_metadata(endpoint: &str, repo_id: &str) -> Result<HostingMetadata, MetadataError> {
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        MetadataClient::new(endpoint).fetch(repo_id)
    } else {
        load_metadata_fixture(Path::new(endpoint), repo_id)
    }
}
