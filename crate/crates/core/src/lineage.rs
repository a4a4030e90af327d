//! Fork inference.
//!
//! Two heuristics decide whether a child repository derives from a candidate
//! parent. The first looks for a shared first-parent history. The second
//! handles bulk uploads: it finds the child's largest commit and searches the
//! parent's recent versions for the snapshot it most resembles.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{checkout_snapshot, ChangeStatus, CommitRecord, RepoHistory, SnapshotError, SnapshotTree};
use crate::similarity::{SimilarityConfig, SimilarityEngine, SimilarityError};
use crate::stats::{mean, population_std};

pub const DEFAULT_PREFIX_PROBE: usize = 10;
pub const DEFAULT_WINDOW_SECS: i64 = 6 * 30 * 86_400;
pub const DEFAULT_THRESHOLD: f64 = 0.929;

#[derive(Debug, Error)]
pub enum LineageError {
    #[error("repository {0} has no commits")]
    EmptyHistory(String),
    #[error("need at least 2 scores to derive a threshold, got {0}")]
    TooFewScores(usize),
    #[error("invalid lineage input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heuristic {
    H1,
    H2,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Forked,
    NotForked,
    Identical,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForkReport {
    pub child_id: String,
    pub parent_id: String,
    pub heuristic: Heuristic,
    pub verdict: Verdict,
    pub fork_commit_child: Option<String>,
    pub parent_version: Option<String>,
    pub fork_time: Option<i64>,
    pub similarity_at_fork: Option<f64>,
    /// Set when H2 visited only every n-th parent commit.
    pub sampled: bool,
    pub note: Option<String>,
}

impl ForkReport {
    fn empty(child: &RepoHistory, parent: &RepoHistory, heuristic: Heuristic, verdict: Verdict) -> Self {
        ForkReport {
            child_id: child.repo_id().to_string(),
            parent_id: parent.repo_id().to_string(),
            heuristic,
            verdict,
            fork_commit_child: None,
            parent_version: None,
            fork_time: None,
            similarity_at_fork: None,
            sampled: false,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDerivation {
    pub sample_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub three_sigma: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineageConfig {
    pub prefix_probe: usize,
    pub window_secs: i64,
    pub stride: usize,
    pub default_threshold: f64,
    pub similarity: SimilarityConfig,
}

impl Default for LineageConfig {
    fn default() -> Self {
        LineageConfig {
            prefix_probe: DEFAULT_PREFIX_PROBE,
            window_secs: DEFAULT_WINDOW_SECS,
            stride: 1,
            default_threshold: DEFAULT_THRESHOLD,
            similarity: SimilarityConfig::default(),
        }
    }
}

/// Root-first first-parent chain from head, stopping at a truncation boundary.
fn chain(history: &RepoHistory) -> Vec<&CommitRecord> {
    let mut out = Vec::new();
    let mut cur = Some(history.head());
    while let Some(c) = cur {
        out.push(c);
        cur = c.first_parent().and_then(|p| history.get(p));
    }
    out.reverse();
    out
}

fn similarity_or_zero(
    engine: &SimilarityEngine,
    a: &SnapshotTree,
    b: &SnapshotTree,
) -> (f64, Option<String>) {
    match engine.compare(a, b) {
        Ok(r) => (r.score.value, None),
        Err(e @ SimilarityError::NoEligibleFiles { .. }) => (0.0, Some(e.to_string())),
        Err(e) => (0.0, Some(e.to_string())),
    }
}

fn ensure_nonempty(h: &RepoHistory) -> Result<(), LineageError> {
    if h.len() == 0 {
        return Err(LineageError::EmptyHistory(h.repo_id().to_string()));
    }
    Ok(())
}

pub fn heuristic1(
    child: &RepoHistory,
    parent: &RepoHistory,
    prefix_probe: usize,
) -> Result<ForkReport, LineageError> {
    heuristic1_with(child, parent, prefix_probe, &SimilarityEngine::new(SimilarityConfig::default()))
}

/// Shared-history heuristic using a caller-supplied similarity engine.
pub fn heuristic1_with(
    child: &RepoHistory,
    parent: &RepoHistory,
    prefix_probe: usize,
    engine: &SimilarityEngine,
) -> Result<ForkReport, LineageError> {
    ensure_nonempty(child)?;
    ensure_nonempty(parent)?;
    let cc = chain(child);
    let pc = chain(parent);
    let shared = cc
        .iter()
        .zip(&pc)
        .take_while(|(a, b)| a.id == b.id)
        .count();
    let probe = prefix_probe.max(1).min(cc.len());
    if shared == cc.len() || shared == pc.len() {
        let mut r = ForkReport::empty(child, parent, Heuristic::H1, Verdict::Identical);
        r.fork_commit_child = Some(cc[shared - 1].id.clone());
        r.parent_version = r.fork_commit_child.clone();
        return Ok(r);
    }
    if shared < probe {
        return Ok(ForkReport::empty(child, parent, Heuristic::H1, Verdict::NotForked));
    }
    let last_shared = cc[shared - 1];
    let child_head = checkout_snapshot(child, &child.head().id)?;
    let parent_at_fork = checkout_snapshot(parent, &last_shared.id)?;
    let (sim, note) = similarity_or_zero(engine, &child_head, &parent_at_fork);
    let mut r = ForkReport::empty(child, parent, Heuristic::H1, Verdict::Forked);
    r.fork_commit_child = Some(last_shared.id.clone());
    r.parent_version = Some(last_shared.id.clone());
    r.fork_time = Some(cc[shared].author_time);
    r.similarity_at_fork = Some(sim);
    r.note = note;
    Ok(r)
}

fn changed_files(c: &CommitRecord) -> usize {
    c.file_changes
        .iter()
        .filter(|f| !matches!(f.status, ChangeStatus::Deleted))
        .count()
}

pub fn heuristic2(
    child: &RepoHistory,
    parent: &RepoHistory,
    threshold: f64,
    window_secs: i64,
    stride: usize,
) -> Result<ForkReport, LineageError> {
    heuristic2_with(
        child,
        parent,
        threshold,
        window_secs,
        stride,
        &SimilarityEngine::new(SimilarityConfig::default()),
    )
}

/// Bulk-upload heuristic using a caller-supplied similarity engine.
pub fn heuristic2_with(
    child: &RepoHistory,
    parent: &RepoHistory,
    threshold: f64,
    window_secs: i64,
    stride: usize,
    engine: &SimilarityEngine,
) -> Result<ForkReport, LineageError> {
    ensure_nonempty(child)?;
    ensure_nonempty(parent)?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(LineageError::InvalidInput(format!("threshold {threshold} outside (0, 1]")));
    }
    if window_secs <= 0 || stride == 0 {
        return Err(LineageError::InvalidInput("window and stride must be positive".into()));
    }
    let upload = child
        .commits()
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            changed_files(a)
                .cmp(&changed_files(b))
                .then_with(|| b.author_time.cmp(&a.author_time))
                .then_with(|| j.cmp(i))
        })
        .map(|(_, c)| c)
        .expect("non-empty history");
    let fork_time = upload.author_time;

    let mut candidates: Vec<(usize, &CommitRecord)> = parent
        .commits()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.author_time >= fork_time - window_secs && c.author_time <= fork_time)
        .collect();
    candidates.sort_by_key(|(i, c)| (c.author_time, *i));
    let visited: Vec<&CommitRecord> = candidates
        .into_iter()
        .step_by(stride)
        .map(|(_, c)| c)
        .collect();

    let mut report = ForkReport::empty(child, parent, Heuristic::H2, Verdict::Undetermined);
    report.fork_commit_child = Some(upload.id.clone());
    report.fork_time = Some(fork_time);
    report.sampled = stride > 1;
    if visited.is_empty() {
        report.note = Some("no parent commits in the search window".into());
        return Ok(report);
    }

    let child_snap = checkout_snapshot(child, &upload.id)?;
    let scores: Vec<f64> = visited
        .par_iter()
        .map(|p| -> Result<f64, LineageError> {
            let snap = checkout_snapshot(parent, &p.id)?;
            Ok(similarity_or_zero(engine, &child_snap, &snap).0)
        })
        .collect::<Result<_, _>>()?;
    // earliest visited commit wins ties
    let (best_idx, best) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    report.parent_version = Some(visited[best_idx].id.clone());
    report.similarity_at_fork = Some(best);
    report.verdict = if best >= threshold {
        Verdict::Forked
    } else {
        Verdict::NotForked
    };
    Ok(report)
}

pub fn derive_threshold(scores: &[f64]) -> Result<ThresholdDerivation, LineageError> {
    if scores.len() < 2 {
        return Err(LineageError::TooFewScores(scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LineageError::InvalidInput("non-finite similarity score".into()));
    }
    // sorted so the arithmetic does not depend on input order
    let mut sample = scores.to_vec();
    sample.sort_by(f64::total_cmp);
    let m = mean(&sample);
    let std = population_std(&sample);
    let three_sigma = 3.0 * std;
    Ok(ThresholdDerivation {
        threshold: (m - three_sigma).max(0.0),
        sample_scores: sample,
        mean: m,
        std,
        three_sigma,
    })
}

#[derive(Debug)]
pub struct SweepResult {
    /// Sorted by child id.
    pub reports: Vec<ForkReport>,
    pub threshold: f64,
    /// Absent when fewer than two H1 forks were found and the configured
    /// default threshold applied.
    pub derivation: Option<ThresholdDerivation>,
    pub failures: Vec<(String, LineageError)>,
}

/// H1 on every child, a threshold from the H1 fork scores, then H2 on every
/// child H1 rejected. A child that cannot be evaluated lands in `failures`.
pub fn lineage_sweep(
    children: &[RepoHistory],
    parent: &RepoHistory,
    cfg: &LineageConfig,
) -> Result<SweepResult, LineageError> {
    ensure_nonempty(parent)?;
    let engine = SimilarityEngine::new(cfg.similarity.clone());
    let mut seen = HashSet::new();
    for c in children {
        if !seen.insert(c.repo_id()) {
            return Err(LineageError::InvalidInput(format!("duplicate child {}", c.repo_id())));
        }
    }
    let h1: Vec<(&RepoHistory, Result<ForkReport, LineageError>)> = children
        .par_iter()
        .map(|c| (c, heuristic1_with(c, parent, cfg.prefix_probe, &engine)))
        .collect();
    let h1_scores: Vec<f64> = h1
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok())
        .filter(|r| r.verdict == Verdict::Forked && r.note.is_none())
        .filter_map(|r| r.similarity_at_fork)
        .collect();
    let derivation = if h1_scores.len() >= 2 {
        Some(derive_threshold(&h1_scores)?)
    } else {
        None
    };
    let threshold = derivation
        .as_ref()
        .map(|d| d.threshold)
        .filter(|t| *t > 0.0)
        .unwrap_or(cfg.default_threshold);

    let outcomes: Vec<(String, Result<ForkReport, LineageError>)> = h1
        .into_par_iter()
        .map(|(c, r)| {
            let r = match r {
                Ok(rep) if rep.verdict == Verdict::NotForked => {
                    heuristic2_with(c, parent, threshold, cfg.window_secs, cfg.stride, &engine)
                }
                other => other,
            };
            (c.repo_id().to_string(), r)
        })
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push((id, e)),
        }
    }
    reports.sort_by(|a, b| a.child_id.cmp(&b.child_id));
    failures.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SweepResult {
        reports,
        threshold,
        derivation,
        failures,
    })
}
