//! History ingest: uniform commit records from git repositories or JSON
//! fixtures, snapshot reconstruction, and hosting metadata.

mod fixture;
mod git;
mod metadata;
mod snapshot;

use std::collections::HashMap;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{history_from_fixture_str, history_to_fixture_string, load_fixture};
pub use git::load_git_history;
pub use metadata::{
    fetch_hosting_metadata, load_metadata_fixture, parse_metadata_fixture, HostingMetadata,
    MetadataClient, MetadataError, RetryPolicy,
};
pub(crate) use snapshot::resolve_hunks;
pub use snapshot::{checkout_snapshot, first_parent_chain, FileContent, SnapshotError, SnapshotTree};

/// Opaque commit identifier (hex for git, free-form for fixtures).
pub type CommitId = String;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read source {source_path}: {message}")]
    UnreadableSource { source_path: String, message: String },
    #[error("malformed fixture at {pointer}: {message}")]
    MalformedFixture { pointer: String, message: String },
    #[error("commit graph contains a cycle through {commit}")]
    CycleDetected { commit: CommitId },
}

impl IngestError {
    pub(crate) fn malformed(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        IngestError::MalformedFixture {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

/// How a file was touched by a commit, relative to the commit's first parent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChangeStatus {
    Added,
    Modified,
    Deleted,
    Renamed { old_path: String },
}

/// One contiguous replacement inside a file, in pre-image coordinates.
///
/// `old_start` is the 0-based index of the first deleted line, or the
/// insertion point when `old_len` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileChange {
    pub path: String,
    pub status: ChangeStatus,
    /// Binary changes carry no line content.
    pub binary: bool,
    pub added_lines: Vec<String>,
    pub deleted_lines: Vec<String>,
    /// Hunk layout partitioning `added_lines`/`deleted_lines` in order.
    /// `None` when the source only recorded flat line lists.
    pub hunks: Option<Vec<Hunk>>,
}

impl FileChange {
    pub fn added(path: impl Into<String>, lines: Vec<String>) -> Self {
        let n = lines.len();
        FileChange {
            path: path.into(),
            status: ChangeStatus::Added,
            binary: false,
            added_lines: lines,
            deleted_lines: Vec::new(),
            hunks: Some(vec![Hunk {
                old_start: 0,
                old_len: 0,
                new_len: n,
            }]),
        }
    }

    pub fn deleted(path: impl Into<String>, lines: Vec<String>) -> Self {
        let n = lines.len();
        FileChange {
            path: path.into(),
            status: ChangeStatus::Deleted,
            binary: false,
            added_lines: Vec::new(),
            deleted_lines: lines,
            hunks: Some(vec![Hunk {
                old_start: 0,
                old_len: n,
                new_len: 0,
            }]),
        }
    }

    /// The path this change reads its pre-image from.
    pub fn source_path(&self) -> &str {
        match &self.status {
            ChangeStatus::Renamed { old_path } => old_path,
            _ => &self.path,
        }
    }

    fn validate(&self, pointer: &str) -> Result<(), IngestError> {
        validate_path(&self.path).map_err(|m| IngestError::malformed(format!("{pointer}/path"), m))?;
        if let ChangeStatus::Renamed { old_path } = &self.status {
            validate_path(old_path)
                .map_err(|m| IngestError::malformed(format!("{pointer}/old_path"), m))?;
        }
        match self.status {
            ChangeStatus::Added if !self.deleted_lines.is_empty() => {
                return Err(IngestError::malformed(
                    format!("{pointer}/deleted"),
                    "added file cannot delete lines",
                ))
            }
            ChangeStatus::Deleted if !self.added_lines.is_empty() => {
                return Err(IngestError::malformed(
                    format!("{pointer}/added"),
                    "deleted file cannot add lines",
                ))
            }
            _ => {}
        }
        if self.binary && !(self.added_lines.is_empty() && self.deleted_lines.is_empty()) {
            return Err(IngestError::malformed(
                pointer.to_string(),
                "binary change must not carry line content",
            ));
        }
        if let Some(hunks) = &self.hunks {
            let old: usize = hunks.iter().map(|h| h.old_len).sum();
            let new: usize = hunks.iter().map(|h| h.new_len).sum();
            if old != self.deleted_lines.len() || new != self.added_lines.len() {
                return Err(IngestError::malformed(
                    format!("{pointer}/hunks"),
                    format!(
                        "hunk lengths ({old} deleted, {new} added) disagree with line lists ({}, {})",
                        self.deleted_lines.len(),
                        self.added_lines.len()
                    ),
                ));
            }
            for (i, pair) in hunks.windows(2).enumerate() {
                if pair[1].old_start < pair[0].old_start + pair[0].old_len {
                    return Err(IngestError::malformed(
                        format!("{pointer}/hunks/{}", i + 1),
                        "hunks overlap or are out of order",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn validate_path(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("path is empty".into());
    }
    let p = Path::new(path);
    for c in p.components() {
        match c {
            Component::Normal(_) | Component::CurDir => {}
            Component::ParentDir => return Err(format!("path {path:?} escapes the repository")),
            Component::RootDir | Component::Prefix(_) => {
                return Err(format!("path {path:?} is not repository-relative"))
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub id: CommitId,
    pub parents: Vec<CommitId>,
    /// Seconds since the Unix epoch, UTC.
    pub author_time: i64,
    pub author_id: String,
    pub file_changes: Vec<FileChange>,
}

impl CommitRecord {
    pub fn first_parent(&self) -> Option<&str> {
        self.parents.first().map(String::as_str)
    }

    pub fn is_merge(&self) -> bool {
        self.parents.len() > 1
    }

    /// Total added lines over non-binary changes.
    pub fn added_line_count(&self) -> usize {
        self.file_changes
            .iter()
            .filter(|c| !c.binary)
            .map(|c| c.added_lines.len())
            .sum()
    }

    pub fn deleted_line_count(&self) -> usize {
        self.file_changes
            .iter()
            .filter(|c| !c.binary)
            .map(|c| c.deleted_lines.len())
            .sum()
    }
}

/// A validated commit history in topological order. Immutable once built.
#[derive(Debug, Clone)]
pub struct RepoHistory {
    repo_id: String,
    commits: Vec<CommitRecord>,
    truncated: bool,
    index: HashMap<CommitId, usize>,
}

impl PartialEq for RepoHistory {
    fn eq(&self, other: &Self) -> bool {
        self.repo_id == other.repo_id
            && self.truncated == other.truncated
            && self.commits == other.commits
    }
}

impl RepoHistory {
    /// Validates and wraps a commit list. The last commit is the head.
    pub fn new(
        repo_id: impl Into<String>,
        commits: Vec<CommitRecord>,
        truncated: bool,
    ) -> Result<Self, IngestError> {
        let repo_id = repo_id.into();
        if repo_id.is_empty() {
            return Err(IngestError::malformed("/repo_id", "repo_id is empty"));
        }
        if commits.is_empty() {
            return Err(IngestError::malformed("/commits", "history has no commits"));
        }
        let mut index = HashMap::with_capacity(commits.len());
        for (i, c) in commits.iter().enumerate() {
            if c.id.is_empty() {
                return Err(IngestError::malformed(format!("/commits/{i}/id"), "empty commit id"));
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(IngestError::malformed(
                    format!("/commits/{i}/id"),
                    format!("duplicate commit id {}", c.id),
                ));
            }
            if c.author_time <= 0 {
                return Err(IngestError::malformed(
                    format!("/commits/{i}/author_time"),
                    "author_time must be positive",
                ));
            }
            for (j, fc) in c.file_changes.iter().enumerate() {
                fc.validate(&format!("/commits/{i}/files/{j}"))?;
            }
        }
        let mut misordered = None;
        for (i, c) in commits.iter().enumerate() {
            for (j, p) in c.parents.iter().enumerate() {
                match index.get(p) {
                    Some(&pi) if pi < i => {}
                    Some(_) => {
                        misordered.get_or_insert((i, j));
                    }
                    None if truncated => {}
                    None => {
                        return Err(IngestError::malformed(
                            format!("/commits/{i}/parents/{j}"),
                            format!("unknown parent {p} in a non-truncated history"),
                        ))
                    }
                }
            }
        }
        if let Some((i, j)) = misordered {
            if let Some(commit) = find_cycle(&commits, &index) {
                return Err(IngestError::CycleDetected { commit });
            }
            return Err(IngestError::malformed(
                format!("/commits/{i}/parents/{j}"),
                "parent listed after its child; commits must be in topological order",
            ));
        }
        Ok(RepoHistory {
            repo_id,
            commits,
            truncated,
            index,
        })
    }

    pub fn repo_id(&self) -> &str {
        &self.repo_id
    }

    pub fn commits(&self) -> &[CommitRecord] {
        &self.commits
    }

    pub fn head(&self) -> &CommitRecord {
        self.commits.last().expect("history is never empty")
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CommitRecord> {
        self.index.get(id).map(|&i| &self.commits[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Keeps only the most recent `n` commits, marking the history truncated
    /// when anything was dropped.
    pub fn keep_last(self, n: usize) -> Result<Self, IngestError> {
        if n >= self.commits.len() {
            return Ok(self);
        }
        let start = self.commits.len() - n;
        let commits = self.commits.into_iter().skip(start).collect();
        RepoHistory::new(self.repo_id, commits, true)
    }
}

/// Iterative three-colour DFS over parent edges; returns a commit on a cycle.
fn find_cycle(commits: &[CommitRecord], index: &HashMap<CommitId, usize>) -> Option<CommitId> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark = vec![Mark::White; commits.len()];
    for start in 0..commits.len() {
        if mark[start] != Mark::White {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        mark[start] = Mark::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let parents = &commits[node].parents;
            if *next < parents.len() {
                let p = &parents[*next];
                *next += 1;
                if let Some(&pi) = index.get(p) {
                    match mark[pi] {
                        Mark::Grey => return Some(commits[pi].id.clone()),
                        Mark::White => {
                            mark[pi] = Mark::Grey;
                            stack.push((pi, 0));
                        }
                        Mark::Black => {}
                    }
                }
            } else {
                mark[node] = Mark::Black;
                stack.pop();
            }
        }
    }
    None
}

/// Bounds applied while loading a history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestLimits {
    /// Keep only the most recent commits; older ones become a truncation
    /// boundary.
    pub max_commits: Option<usize>,
}

/// Loads a history from a JSON fixture file or a local git working
/// directory.
pub fn load_history(source: &Path, limits: IngestLimits) -> Result<RepoHistory, IngestError> {
    let history = if source.is_dir() {
        load_git_history(source, limits)?
    } else if source.is_file() {
        load_fixture(source)?
    } else {
        return Err(IngestError::UnreadableSource {
            source_path: source.display().to_string(),
            message: "not a fixture file or repository directory".into(),
        });
    };
    match limits.max_commits {
        Some(n) => history.keep_last(n),
        None => Ok(history),
    }
}
