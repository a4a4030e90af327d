use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::MaintenanceError;
use crate::ingest::{HostingMetadata, RepoHistory};
use crate::stats::{mean, population_std};

/// A month is a fixed 30-day span.
pub const MONTH_SECS: i64 = 30 * 86_400;

const WINDOWS_MONTHS: [i64; 3] = [3, 6, 12];

/// Column order of the flattened feature vector.
pub const FEATURE_NAMES: [&str; 32] = [
    "commits",
    "branches",
    "releases",
    "contributors",
    "pull_requests",
    "mde_3m",
    "mde_6m",
    "mde_12m",
    "watch",
    "star",
    "fork",
    "issues",
    "open_issues",
    "closed_issues",
    "mean_additions_3m",
    "std_additions_3m",
    "mean_deletions_3m",
    "std_deletions_3m",
    "mean_commit_interval_3m",
    "std_commit_interval_3m",
    "mean_additions_6m",
    "std_additions_6m",
    "mean_deletions_6m",
    "std_deletions_6m",
    "mean_commit_interval_6m",
    "std_commit_interval_6m",
    "mean_additions_12m",
    "std_additions_12m",
    "mean_deletions_12m",
    "std_deletions_12m",
    "mean_commit_interval_12m",
    "std_commit_interval_12m",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Engagement {
    pub commits: u64,
    pub branches: u64,
    pub releases: u64,
    pub contributors: u64,
    pub pull_requests: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MdeScores {
    pub mde_3m: f64,
    pub mde_6m: f64,
    pub mde_12m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Popularity {
    pub watch: u64,
    pub star: u64,
    pub fork: u64,
    pub issues: u64,
    pub open_issues: u64,
    pub closed_issues: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct WindowStats {
    pub mean_additions: f64,
    pub std_additions: f64,
    pub mean_deletions: f64,
    pub std_deletions: f64,
    pub mean_commit_interval_secs: f64,
    pub std_commit_interval_secs: f64,
}

impl WindowStats {
    fn as_array(&self) -> [f64; 6] {
        [
            self.mean_additions,
            self.std_additions,
            self.mean_deletions,
            self.std_deletions,
            self.mean_commit_interval_secs,
            self.std_commit_interval_secs,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct UpdateStats {
    pub m3: WindowStats,
    pub m6: WindowStats,
    pub m12: WindowStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub repo_id: String,
    pub engagement: Engagement,
    pub mde: MdeScores,
    pub popularity: Popularity,
    pub updates: UpdateStats,
}

impl FeatureVector {
    /// Flattens in [`FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; 32] {
        let e = &self.engagement;
        let p = &self.popularity;
        let mut out = [0.0; 32];
        let head = [
            e.commits as f64,
            e.branches as f64,
            e.releases as f64,
            e.contributors as f64,
            e.pull_requests as f64,
            self.mde.mde_3m,
            self.mde.mde_6m,
            self.mde.mde_12m,
            p.watch as f64,
            p.star as f64,
            p.fork as f64,
            p.issues as f64,
            p.open_issues as f64,
            p.closed_issues as f64,
        ];
        out[..14].copy_from_slice(&head);
        out[14..20].copy_from_slice(&self.updates.m3.as_array());
        out[20..26].copy_from_slice(&self.updates.m6.as_array());
        out[26..32].copy_from_slice(&self.updates.m12.as_array());
        out
    }

    pub fn named(&self) -> Vec<(&'static str, f64)> {
        FEATURE_NAMES.iter().copied().zip(self.to_array()).collect()
    }

    /// Inverse of [`to_array`](Self::to_array); counts are rounded.
    pub fn from_array(repo_id: impl Into<String>, v: &[f64; 32]) -> Self {
        let c = |x: f64| x.round().max(0.0) as u64;
        let w = |s: &[f64]| WindowStats {
            mean_additions: s[0],
            std_additions: s[1],
            mean_deletions: s[2],
            std_deletions: s[3],
            mean_commit_interval_secs: s[4],
            std_commit_interval_secs: s[5],
        };
        FeatureVector {
            repo_id: repo_id.into(),
            engagement: Engagement {
                commits: c(v[0]),
                branches: c(v[1]),
                releases: c(v[2]),
                contributors: c(v[3]),
                pull_requests: c(v[4]),
            },
            mde: MdeScores {
                mde_3m: v[5],
                mde_6m: v[6],
                mde_12m: v[7],
            },
            popularity: Popularity {
                watch: c(v[8]),
                star: c(v[9]),
                fork: c(v[10]),
                issues: c(v[11]),
                open_issues: c(v[12]),
                closed_issues: c(v[13]),
            },
            updates: UpdateStats {
                m3: w(&v[14..20]),
                m6: w(&v[20..26]),
                m12: w(&v[26..32]),
            },
        }
    }
}

/// Mean developer engagement: the per-period share of the distinct
/// contributor total, averaged over periods. 0 when nobody contributed.
pub fn compute_mde(contributors_per_period: &[u64], distinct_total: u64) -> Result<f64, MaintenanceError> {
    if contributors_per_period.is_empty() {
        return Err(MaintenanceError::InvalidInput("no periods".into()));
    }
    if let Some(&max) = contributors_per_period.iter().max() {
        if max > distinct_total {
            return Err(MaintenanceError::InvalidInput(format!(
                "period count {max} exceeds distinct total {distinct_total}"
            )));
        }
    }
    if distinct_total == 0 {
        return Ok(0.0);
    }
    let total = distinct_total as f64;
    let sum: f64 = contributors_per_period.iter().map(|&c| c as f64 / total).sum();
    Ok(sum / contributors_per_period.len() as f64)
}

struct WindowCommit<'a> {
    time: i64,
    added: usize,
    deleted: usize,
    author: &'a str,
}

fn window_stats(commits: &[WindowCommit<'_>], lo: i64, hi: i64) -> WindowStats {
    let inside: Vec<&WindowCommit<'_>> = commits.iter().filter(|c| c.time > lo && c.time <= hi).collect();
    let adds: Vec<f64> = inside.iter().map(|c| c.added as f64).collect();
    let dels: Vec<f64> = inside.iter().map(|c| c.deleted as f64).collect();
    let mut times: Vec<i64> = inside.iter().map(|c| c.time).collect();
    times.sort_unstable();
    let gaps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    WindowStats {
        mean_additions: mean(&adds),
        std_additions: population_std(&adds),
        mean_deletions: mean(&dels),
        std_deletions: population_std(&dels),
        mean_commit_interval_secs: mean(&gaps),
        std_commit_interval_secs: population_std(&gaps),
    }
}

fn distinct_authors(commits: &[WindowCommit<'_>], lo: i64, hi: i64) -> u64 {
    commits
        .iter()
        .filter(|c| c.time > lo && c.time <= hi)
        .map(|c| c.author)
        .collect::<HashSet<_>>()
        .len() as u64
}

/// Computes the 32 maintenance features as of `as_of`.
///
/// Windows are half-open `(as_of - w, as_of]`. MDE for a k-month variant
/// splits the trailing 12 months into 12/k periods. Merge commits contribute
/// their first-parent diff.
pub fn extract_features(
    history: &RepoHistory,
    meta: &HostingMetadata,
    as_of: i64,
) -> Result<FeatureVector, MaintenanceError> {
    let commits: Vec<WindowCommit<'_>> = history
        .commits()
        .iter()
        .filter(|c| c.author_time <= as_of)
        .map(|c| WindowCommit {
            time: c.author_time,
            added: c.added_line_count(),
            deleted: c.deleted_line_count(),
            author: c.author_id.as_str(),
        })
        .collect();
    if commits.is_empty() {
        return Err(MaintenanceError::EmptyHistory);
    }
    let contributors = commits.iter().map(|c| c.author).collect::<HashSet<_>>().len() as u64;

    let year_start = as_of - 12 * MONTH_SECS;
    let year_total = distinct_authors(&commits, year_start, as_of);
    let mut mde = [0.0; 3];
    for (slot, months) in WINDOWS_MONTHS.iter().enumerate() {
        let span = months * MONTH_SECS;
        let periods: Vec<u64> = (0..12 / months)
            .map(|i| {
                let lo = year_start + i * span;
                distinct_authors(&commits, lo, lo + span)
            })
            .collect();
        mde[slot] = compute_mde(&periods, year_total)?;
    }

    let w = |months: i64| window_stats(&commits, as_of - months * MONTH_SECS, as_of);
    Ok(FeatureVector {
        repo_id: history.repo_id().to_string(),
        engagement: Engagement {
            commits: commits.len() as u64,
            branches: meta.branches,
            releases: meta.releases,
            contributors,
            pull_requests: meta.pull_requests,
        },
        mde: MdeScores {
            mde_3m: mde[0],
            mde_6m: mde[1],
            mde_12m: mde[2],
        },
        popularity: Popularity {
            watch: meta.watch,
            star: meta.star,
            fork: meta.fork_count,
            issues: meta.issues_total,
            open_issues: meta.issues_open,
            closed_issues: meta.issues_closed,
        },
        updates: UpdateStats {
            m3: w(3),
            m6: w(6),
            m12: w(12),
        },
    })
}
