//! Vulnerability signature scanning.
//!
//! A signature is a set of whitespace-insensitive code fragments for the
//! vulnerable code and for its fix. [`scan_history`] walks the head's
//! first-parent chain once, keeping a rolling tree and checking only the
//! regions each diff touched. [`scan_history_oracle`] reconstructs and scans
//! every snapshot from scratch and defines the expected answer.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::ingest::{
    checkout_snapshot, first_parent_chain, resolve_hunks, ChangeStatus, CommitRecord, RepoHistory, SnapshotError,
    SnapshotTree,
};
use crate::stats::{lower_median, mean, population_std};

pub const DEFAULT_FALLBACK_FILE_LIMIT: usize = 30;
/// Lines of unchanged text kept on each side of a hunk.
pub const CONTEXT_LINES: usize = 3;
const DAY_SECS: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum VulnError {
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("invalid signature {cve_id}: {message}")]
    InvalidSignature { cve_id: String, message: String },
    #[error("cannot read signature file {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("no patched findings to summarise")]
    EmptyInput,
    #[error("duplicate finding for {repo_id} / {cve_id}")]
    DuplicateFinding { repo_id: String, cve_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnSignature {
    pub cve_id: String,
    #[serde(default)]
    pub cvss: f64,
    #[serde(default)]
    pub category: String,
    pub reference_patch_time: i64,
    #[serde(default)]
    pub match_mode: MatchMode,
    pub vuln_fragments: Vec<String>,
    pub patch_fragments: Vec<String>,
}

impl VulnSignature {
    pub fn validate(&self) -> Result<(), VulnError> {
        let bad = |message: &str| VulnError::InvalidSignature {
            cve_id: self.cve_id.clone(),
            message: message.to_string(),
        };
        if self.vuln_fragments.is_empty() || self.patch_fragments.is_empty() {
            return Err(bad("needs at least one vulnerable and one patch fragment"));
        }
        if self
            .vuln_fragments
            .iter()
            .chain(&self.patch_fragments)
            .any(|f| normalize_code(f).is_empty())
        {
            return Err(bad("fragment is empty after whitespace removal"));
        }
        if !(0.0..=10.0).contains(&self.cvss) {
            return Err(bad("cvss outside 0..10"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct SignatureFile {
    signatures: Vec<VulnSignature>,
}

pub fn parse_signatures(text: &str) -> Result<Vec<VulnSignature>, VulnError> {
    let doc: SignatureFile = serde_json::from_str(text).map_err(|e| VulnError::Unreadable {
        path: "<inline>".into(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for s in &doc.signatures {
        s.validate()?;
        if !seen.insert(s.cve_id.clone()) {
            return Err(VulnError::InvalidSignature {
                cve_id: s.cve_id.clone(),
                message: "listed twice".into(),
            });
        }
    }
    Ok(doc.signatures)
}

pub fn load_signatures(path: &Path) -> Result<Vec<VulnSignature>, VulnError> {
    let text = std::fs::read_to_string(path).map_err(|e| VulnError::Unreadable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_signatures(&text).map_err(|e| match e {
        VulnError::Unreadable { message, .. } => VulnError::Unreadable {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VulnStatus {
    Vulnerable,
    Patched,
    NeverPresent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnFinding {
    pub repo_id: String,
    pub cve_id: String,
    pub status: VulnStatus,
    pub introduced_at: Option<i64>,
    pub introduced_commit: Option<String>,
    pub patched_at: Option<i64>,
    pub patched_commit: Option<String>,
    pub time_to_patch_secs: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub fallback_file_limit: usize,
    /// Allow-list of file suffixes; empty means every text file.
    pub extensions: Vec<String>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            fallback_file_limit: DEFAULT_FALLBACK_FILE_LIMIT,
            extensions: [".c", ".cc", ".cpp", ".cxx", ".h", ".hpp"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl ScanConfig {
    fn eligible(&self, path: &str) -> bool {
        let lower = path.to_ascii_lowercase();
        self.extensions.is_empty()
            || self
                .extensions
                .iter()
                .any(|e| lower.ends_with(&e.to_ascii_lowercase()))
    }
}

/// Removes every Unicode whitespace character.
pub fn normalize_code(text: &str) -> String {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

fn normalize_lines(lines: &[String]) -> String {
    lines.iter().flat_map(|l| l.chars()).filter(|c| !c.is_whitespace()).collect()
}

fn mode_holds(mode: MatchMode, present: impl Iterator<Item = bool>) -> bool {
    let mut present = present;
    match mode {
        MatchMode::All => present.all(|p| p),
        MatchMode::Any => present.any(|p| p),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatestMatch {
    pub matched: bool,
    /// Eligible files containing at least one vulnerable fragment.
    pub files: Vec<String>,
}

fn eligible_texts<'s>(
    snapshot: &'s SnapshotTree,
    cfg: &'s ScanConfig,
) -> impl Iterator<Item = (&'s str, String)> + 's {
    snapshot
        .iter()
        .filter(move |(p, c)| !c.binary && cfg.eligible(p))
        .map(|(p, c)| (p, normalize_lines(&c.lines)))
}

pub fn scan_latest(snapshot: &SnapshotTree, sig: &VulnSignature) -> LatestMatch {
    scan_latest_with(snapshot, sig, &ScanConfig::default())
}

pub fn scan_latest_with(snapshot: &SnapshotTree, sig: &VulnSignature, cfg: &ScanConfig) -> LatestMatch {
    let frags: Vec<String> = sig.vuln_fragments.iter().map(|f| normalize_code(f)).collect();
    let mut hit = vec![false; frags.len()];
    let mut files = Vec::new();
    for (path, text) in eligible_texts(snapshot, cfg) {
        let mut any = false;
        for (k, f) in frags.iter().enumerate() {
            if text.contains(f.as_str()) {
                hit[k] = true;
                any = true;
            }
        }
        if any {
            files.push(path.to_string());
        }
    }
    LatestMatch {
        matched: mode_holds(sig.match_mode, hit.into_iter()),
        files,
    }
}

/// Per-commit presence of the vulnerable and patched fragment sets.
#[derive(Debug, Clone, Copy)]
struct Presence {
    vuln: bool,
    patch: bool,
}

fn classify(
    history: &RepoHistory,
    sig: &VulnSignature,
    chain: &[&CommitRecord],
    presence: &[Presence],
) -> VulnFinding {
    let mut f = VulnFinding {
        repo_id: history.repo_id().to_string(),
        cve_id: sig.cve_id.clone(),
        status: VulnStatus::NeverPresent,
        introduced_at: None,
        introduced_commit: None,
        patched_at: None,
        patched_commit: None,
        time_to_patch_secs: None,
    };
    let Some(intro) = presence.iter().position(|p| p.vuln) else {
        return f;
    };
    f.introduced_at = Some(chain[intro].author_time);
    f.introduced_commit = Some(chain[intro].id.clone());
    if presence.last().is_some_and(|p| p.vuln) {
        f.status = VulnStatus::Vulnerable;
        return f;
    }
    // patch fragment landing, or failing that, the vulnerable code vanishing
    let fixed = (intro..presence.len())
        .find(|&j| presence[j].patch)
        .or_else(|| (intro + 1..presence.len()).find(|&j| !presence[j].vuln))
        .expect("head is not vulnerable, so some later commit lacks the fragment");
    let t = chain[fixed].author_time;
    f.status = VulnStatus::Patched;
    f.patched_at = Some(t);
    f.patched_commit = Some(chain[fixed].id.clone());
    f.time_to_patch_secs = Some(t - sig.reference_patch_time);
    f
}

/// Reference scan: reconstructs and searches every snapshot on the head's
/// first-parent chain.
pub fn scan_history_oracle(
    history: &RepoHistory,
    sig: &VulnSignature,
    cfg: &ScanConfig,
) -> Result<VulnFinding, VulnError> {
    sig.validate()?;
    let chain = first_parent_chain(history, &history.head().id)?;
    let vf: Vec<String> = sig.vuln_fragments.iter().map(|f| normalize_code(f)).collect();
    let pf: Vec<String> = sig.patch_fragments.iter().map(|f| normalize_code(f)).collect();
    let mut presence = Vec::with_capacity(chain.len());
    for c in &chain {
        let snap = checkout_snapshot(history, &c.id)?;
        let texts: Vec<String> = eligible_texts(&snap, cfg).map(|(_, t)| t).collect();
        let has = |frag: &String| texts.iter().any(|t| t.contains(frag.as_str()));
        presence.push(Presence {
            vuln: mode_holds(sig.match_mode, vf.iter().map(has)),
            patch: mode_holds(sig.match_mode, pf.iter().map(has)),
        });
    }
    Ok(classify(history, sig, &chain, &presence))
}

/// Which files currently contain each fragment.
struct FragmentIndex {
    frags: Vec<String>,
    /// fragment -> files containing it
    holders: Vec<HashSet<String>>,
    longest: usize,
}

impl FragmentIndex {
    fn new(frags: Vec<String>) -> Self {
        let longest = frags.iter().map(|f| f.chars().count()).max().unwrap_or(0);
        FragmentIndex {
            holders: vec![HashSet::new(); frags.len()],
            frags,
            longest,
        }
    }

    fn forget(&mut self, path: &str) {
        for h in &mut self.holders {
            h.remove(path);
        }
    }

    fn rescan_file(&mut self, path: &str, normalized: &str) {
        for (k, f) in self.frags.iter().enumerate() {
            if normalized.contains(f.as_str()) {
                self.holders[k].insert(path.to_string());
            } else {
                self.holders[k].remove(path);
            }
        }
    }

    fn state(&self, mode: MatchMode) -> bool {
        mode_holds(mode, self.holders.iter().map(|h| !h.is_empty()))
    }
}

/// A post-image region around one hunk.
struct Window {
    text: String,
    /// Each side has at least `longest - 1` normalized characters of context
    /// or reaches the file boundary.
    conclusive: bool,
}

fn hunk_windows(post: &[String], hunks: &[(usize, usize)], need: usize) -> Vec<Window> {
    hunks
        .iter()
        .map(|&(start, len)| {
            let lo = start.saturating_sub(CONTEXT_LINES);
            let hi = (start + len + CONTEXT_LINES).min(post.len());
            let before = normalize_lines(&post[lo..start]).chars().count();
            let after = normalize_lines(&post[(start + len).min(post.len())..hi]).chars().count();
            let conclusive =
                (lo == 0 || before + 1 >= need) && (hi == post.len() || after + 1 >= need);
            Window {
                text: normalize_lines(&post[lo..hi]),
                conclusive,
            }
        })
        .collect()
}

/// Diff-driven scan. Equivalent to [`scan_history_oracle`] in verdict,
/// timestamps and commits.
pub fn scan_history(
    history: &RepoHistory,
    sig: &VulnSignature,
    cfg: &ScanConfig,
) -> Result<VulnFinding, VulnError> {
    sig.validate()?;
    let chain = first_parent_chain(history, &history.head().id)?;
    let mut vuln = FragmentIndex::new(sig.vuln_fragments.iter().map(|f| normalize_code(f)).collect());
    let mut patch = FragmentIndex::new(sig.patch_fragments.iter().map(|f| normalize_code(f)).collect());
    let mut tree = SnapshotTree::new();
    let mut presence = Vec::with_capacity(chain.len());
    let mut full_rescans = 0usize;

    for commit in &chain {
        if commit.file_changes.len() > cfg.fallback_file_limit {
            tree.apply_commit(commit)?;
            full_rescans += 1;
            vuln.holders.iter_mut().for_each(HashSet::clear);
            patch.holders.iter_mut().for_each(HashSet::clear);
            for (path, text) in eligible_texts(&tree, cfg) {
                vuln.rescan_file(path, &text);
                patch.rescan_file(path, &text);
            }
        } else {
            // post-image hunk spans (start, len) per changed path
            let mut touched: BTreeMap<String, Option<Vec<(usize, usize)>>> = BTreeMap::new();
            for change in &commit.file_changes {
                match &change.status {
                    ChangeStatus::Deleted => {
                        vuln.forget(&change.path);
                        patch.forget(&change.path);
                        touched.remove(&change.path);
                    }
                    ChangeStatus::Added => {
                        touched.insert(change.path.clone(), None);
                    }
                    ChangeStatus::Modified | ChangeStatus::Renamed { .. } => {
                        let source = change.source_path().to_string();
                        let pre = tree.get(&source).map(|c| c.lines.clone());
                        if source != change.path {
                            for idx in [&mut vuln, &mut patch] {
                                for h in &mut idx.holders {
                                    if h.remove(&source) {
                                        h.insert(change.path.clone());
                                    }
                                }
                            }
                            touched.remove(&source);
                        }
                        let spans = match (&pre, change.binary) {
                            (Some(pre), false) if cfg.eligible(&source) => {
                                resolve_hunks(pre, change).ok().map(|hunks| {
                                    let mut shift: isize = 0;
                                    hunks
                                        .iter()
                                        .map(|h| {
                                            let start = (h.old_start as isize + shift) as usize;
                                            shift += h.new_len as isize - h.old_len as isize;
                                            (start, h.new_len)
                                        })
                                        .collect()
                                })
                            }
                            _ => None,
                        };
                        let no_lines = change.added_lines.is_empty() && change.deleted_lines.is_empty();
                        if no_lines && !change.binary && source != change.path && cfg.eligible(&source) {
                            // pure rename between eligible paths keeps content
                            touched.insert(change.path.clone(), Some(Vec::new()));
                        } else {
                            touched.insert(change.path.clone(), spans);
                        }
                    }
                }
            }
            tree.apply_commit(commit)?;
            for (path, spans) in touched {
                let content = tree.get(&path).filter(|c| !c.binary && cfg.eligible(&path));
                let Some(content) = content else {
                    vuln.forget(&path);
                    patch.forget(&path);
                    continue;
                };
                for idx in [&mut vuln, &mut patch] {
                    update_file(idx, &path, &content.lines, spans.as_deref());
                }
            }
        }
        presence.push(Presence {
            vuln: vuln.state(sig.match_mode),
            patch: patch.state(sig.match_mode),
        });
    }
    debug!(repo = history.repo_id(), cve = %sig.cve_id, full_rescans, "scan finished");
    Ok(classify(history, sig, &chain, &presence))
}

fn update_file(idx: &mut FragmentIndex, path: &str, post: &[String], spans: Option<&[(usize, usize)]>) {
    let Some(spans) = spans else {
        idx.rescan_file(path, &normalize_lines(post));
        return;
    };
    if spans.is_empty() {
        return;
    }
    let windows = hunk_windows(post, spans, idx.longest);
    let conclusive = windows.iter().all(|w| w.conclusive);
    let mut unresolved = false;
    for (k, f) in idx.frags.iter().enumerate() {
        if windows.iter().any(|w| w.text.contains(f.as_str())) {
            idx.holders[k].insert(path.to_string());
        } else if idx.holders[k].contains(path) || !conclusive {
            // an old occurrence may have been edited away, or a new one may
            // reach past the window
            unresolved = true;
        }
    }
    if unresolved {
        idx.rescan_file(path, &normalize_lines(post));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub count: usize,
    pub median_days: f64,
    pub mean_days: f64,
    pub std_days: f64,
    pub within_16_days_fraction: f64,
}

pub fn patch_time_stats(findings: &[VulnFinding]) -> Result<PatchStats, VulnError> {
    let days: Vec<f64> = findings
        .iter()
        .filter(|f| f.status == VulnStatus::Patched)
        .filter_map(|f| f.time_to_patch_secs)
        .map(|s| s as f64 / DAY_SECS)
        .collect();
    patch_stats_from_days(&days)
}

pub fn patch_stats_from_days(days: &[f64]) -> Result<PatchStats, VulnError> {
    let median_days = lower_median(days).ok_or(VulnError::EmptyInput)?;
    let within = days.iter().filter(|d| **d <= 16.0).count();
    Ok(PatchStats {
        count: days.len(),
        median_days,
        mean_days: mean(days),
        std_days: population_std(days),
        within_16_days_fraction: within as f64 / days.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRow {
    pub repo_id: String,
    pub unpatched_count: usize,
}

/// Unpatched signature count per repository, sorted by repository id.
pub fn vuln_census(findings: &[VulnFinding]) -> Result<Vec<CensusRow>, VulnError> {
    let mut seen = HashSet::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in findings {
        if !seen.insert((&f.repo_id, &f.cve_id)) {
            return Err(VulnError::DuplicateFinding {
                repo_id: f.repo_id.clone(),
                cve_id: f.cve_id.clone(),
            });
        }
        *counts.entry(&f.repo_id).or_insert(0) += usize::from(f.status == VulnStatus::Vulnerable);
    }
    Ok(counts
        .into_iter()
        .map(|(r, n)| CensusRow {
            repo_id: r.to_string(),
            unpatched_count: n,
        })
        .collect())
}

/// Number of repositories with at least `t` unpatched signatures, per `t`.
pub fn census_buckets(rows: &[CensusRow], thresholds: &[usize]) -> Vec<(usize, usize)> {
    thresholds
        .iter()
        .map(|&t| (t, rows.iter().filter(|r| r.unpatched_count >= t).count()))
        .collect()
}

/// Scans every (history, signature) pair in parallel.
pub fn scan_corpus(
    histories: &[RepoHistory],
    sigs: &[VulnSignature],
    cfg: &ScanConfig,
) -> Vec<(String, String, Result<VulnFinding, VulnError>)> {
    use rayon::prelude::*;
    let jobs: Vec<(&RepoHistory, &VulnSignature)> = histories
        .iter()
        .flat_map(|h| sigs.iter().map(move |s| (h, s)))
        .collect();
    jobs.par_iter()
        .map(|(h, s)| (h.repo_id().to_string(), s.cve_id.clone(), scan_history(h, s, cfg)))
        .collect()
}
