//! Full-tree reconstruction by replaying first-parent diffs.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::{ChangeStatus, CommitId, CommitRecord, FileChange, Hunk, RepoHistory};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("unknown commit {0}")]
    UnknownCommit(CommitId),
    #[error("reconstructing {commit} crosses the truncation boundary at {boundary}")]
    TruncatedAncestry { commit: CommitId, boundary: CommitId },
    #[error("cannot replay {path} in commit {commit}: {reason}")]
    UnreplayableChange {
        commit: CommitId,
        path: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FileContent {
    pub lines: Vec<String>,
    pub binary: bool,
}

impl FileContent {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

/// Map of repository-relative path to file content at one commit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SnapshotTree {
    files: BTreeMap<String, Arc<FileContent>>,
}

impl SnapshotTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a tree of text files; contents are split on `\n`.
    pub fn from_texts<I, P, T>(files: I) -> Self
    where
        I: IntoIterator<Item = (P, T)>,
        P: Into<String>,
        T: AsRef<str>,
    {
        let files = files
            .into_iter()
            .map(|(p, t)| {
                let lines = split_lines(t.as_ref());
                (p.into(), Arc::new(FileContent { lines, binary: false }))
            })
            .collect();
        SnapshotTree { files }
    }

    pub fn get(&self, path: &str) -> Option<&FileContent> {
        self.files.get(path).map(Arc::as_ref)
    }

    pub fn text(&self, path: &str) -> Option<String> {
        self.get(path).map(FileContent::text)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FileContent)> {
        self.files.iter().map(|(p, c)| (p.as_str(), c.as_ref()))
    }

    pub fn insert_text(&mut self, path: impl Into<String>, text: &str) {
        self.files.insert(
            path.into(),
            Arc::new(FileContent {
                lines: split_lines(text),
                binary: false,
            }),
        );
    }

    /// Applies every change of `commit` (its diff against the first parent).
    pub fn apply_commit(&mut self, commit: &CommitRecord) -> Result<(), SnapshotError> {
        for change in &commit.file_changes {
            self.apply_change(&commit.id, change)?;
        }
        Ok(())
    }

    fn apply_change(&mut self, commit: &str, change: &FileChange) -> Result<(), SnapshotError> {
        let fail = |reason: &str| SnapshotError::UnreplayableChange {
            commit: commit.to_string(),
            path: change.path.clone(),
            reason: reason.to_string(),
        };
        match &change.status {
            ChangeStatus::Added => {
                if self.files.contains_key(&change.path) {
                    return Err(fail("added file already exists"));
                }
                let content = FileContent {
                    lines: change.added_lines.clone(),
                    binary: change.binary,
                };
                self.files.insert(change.path.clone(), Arc::new(content));
            }
            ChangeStatus::Deleted => {
                if self.files.remove(&change.path).is_none() {
                    return Err(fail("deleted file does not exist"));
                }
            }
            ChangeStatus::Modified | ChangeStatus::Renamed { .. } => {
                let source = change.source_path();
                let old = match &change.status {
                    ChangeStatus::Renamed { .. } => self.files.remove(source),
                    _ => self.files.get(source).cloned(),
                }
                .ok_or_else(|| fail("modified file does not exist"))?;
                if let ChangeStatus::Renamed { .. } = change.status {
                    if self.files.contains_key(&change.path) {
                        return Err(fail("rename target already exists"));
                    }
                }
                let content = if change.binary {
                    FileContent {
                        lines: Vec::new(),
                        binary: true,
                    }
                } else if change.added_lines.is_empty() && change.deleted_lines.is_empty() {
                    (*old).clone()
                } else {
                    let lines = apply_line_change(&old.lines, change).map_err(|r| fail(&r))?;
                    FileContent {
                        lines,
                        binary: false,
                    }
                };
                self.files.insert(change.path.clone(), Arc::new(content));
            }
        }
        Ok(())
    }
}

pub(crate) fn split_lines(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    trimmed.split('\n').map(str::to_string).collect()
}

/// Resolves the hunk layout of a change. Without recorded hunks the deleted
/// lines must occur as one contiguous block of the pre-image (replaced in
/// place); a pure addition appends.
pub(crate) fn resolve_hunks(pre: &[String], change: &FileChange) -> Result<Vec<Hunk>, String> {
    if let Some(h) = &change.hunks {
        return Ok(h.clone());
    }
    let del = &change.deleted_lines;
    if del.is_empty() {
        return Ok(vec![Hunk {
            old_start: pre.len(),
            old_len: 0,
            new_len: change.added_lines.len(),
        }]);
    }
    let at = pre
        .windows(del.len())
        .position(|w| w == del.as_slice())
        .ok_or("deleted lines not found in pre-image")?;
    Ok(vec![Hunk {
        old_start: at,
        old_len: del.len(),
        new_len: change.added_lines.len(),
    }])
}

fn apply_line_change(pre: &[String], change: &FileChange) -> Result<Vec<String>, String> {
    let hunks = resolve_hunks(pre, change)?;
    let mut out = Vec::with_capacity(pre.len() + change.added_lines.len());
    let mut cursor = 0usize;
    let (mut di, mut ai) = (0usize, 0usize);
    for h in &hunks {
        if h.old_start < cursor || h.old_start + h.old_len > pre.len() {
            return Err(format!(
                "hunk at line {} (len {}) outside pre-image of {} lines",
                h.old_start,
                h.old_len,
                pre.len()
            ));
        }
        out.extend_from_slice(&pre[cursor..h.old_start]);
        let expected = &change.deleted_lines[di..di + h.old_len];
        if &pre[h.old_start..h.old_start + h.old_len] != expected {
            return Err(format!("deleted lines do not match pre-image at line {}", h.old_start));
        }
        out.extend_from_slice(&change.added_lines[ai..ai + h.new_len]);
        di += h.old_len;
        ai += h.new_len;
        cursor = h.old_start + h.old_len;
    }
    out.extend_from_slice(&pre[cursor..]);
    Ok(out)
}

/// First-parent lineage of `commit`, ordered root first.
///
/// Fails with `TruncatedAncestry` when the walk reaches a parent that is not
/// part of the history.
pub fn first_parent_chain<'h>(
    history: &'h RepoHistory,
    commit: &str,
) -> Result<Vec<&'h CommitRecord>, SnapshotError> {
    let mut cur = history
        .get(commit)
        .ok_or_else(|| SnapshotError::UnknownCommit(commit.to_string()))?;
    let mut chain = vec![cur];
    while let Some(p) = cur.first_parent() {
        match history.get(p) {
            Some(pc) => {
                chain.push(pc);
                cur = pc;
            }
            None => {
                return Err(SnapshotError::TruncatedAncestry {
                    commit: commit.to_string(),
                    boundary: cur.id.clone(),
                })
            }
        }
    }
    chain.reverse();
    Ok(chain)
}

/// Reconstructs every file at `commit` by replaying the first-parent chain
/// from the root.
pub fn checkout_snapshot(history: &RepoHistory, commit: &str) -> Result<SnapshotTree, SnapshotError> {
    let chain = first_parent_chain(history, commit)?;
    let mut tree = SnapshotTree::new();
    for c in chain {
        tree.apply_commit(c)?;
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::history_from_fixture_str;

    fn lines(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn root_commit_tree() {
        let h = history_from_fixture_str(
            r#"{"repo_id": "r", "commits": [{"id": "c1", "parents": [], "author_time": 1,
            "author_id": "a", "files": [{"path": "a.c", "status": "A", "added": ["x", "y"]}]}]}"#,
        )
        .unwrap();
        let t = checkout_snapshot(&h, "c1").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a.c").unwrap().lines, lines(&["x", "y"]));
    }

    #[test]
    fn delete_and_add_across_commits() {
        let h = history_from_fixture_str(
            r#"{"repo_id": "r", "commits": [
            {"id": "c1", "parents": [], "author_time": 1, "author_id": "a",
             "files": [{"path": "a.c", "status": "A", "added": ["int a;"]}]},
            {"id": "c2", "parents": ["c1"], "author_time": 2, "author_id": "a",
             "files": [{"path": "a.c", "status": "D", "deleted": ["int a;"]},
                       {"path": "b.c", "status": "A", "added": ["int b;"]}]}]}"#,
        )
        .unwrap();
        let t1 = checkout_snapshot(&h, "c1").unwrap();
        let t2 = checkout_snapshot(&h, "c2").unwrap();
        assert_eq!(t1.paths().collect::<Vec<_>>(), vec!["a.c"]);
        assert_eq!(t2.paths().collect::<Vec<_>>(), vec!["b.c"]);
        assert_eq!(t2.text("b.c").unwrap(), "int b;");
    }

    #[test]
    fn unknown_commit() {
        let h = history_from_fixture_str(
            r#"{"repo_id": "r", "commits": [{"id": "c1", "parents": [], "author_time": 1, "author_id": "a"}]}"#,
        )
        .unwrap();
        assert_eq!(
            checkout_snapshot(&h, "zz"),
            Err(SnapshotError::UnknownCommit("zz".into()))
        );
    }

    #[test]
    fn truncated_ancestry() {
        let h = history_from_fixture_str(
            r#"{"repo_id": "r", "truncated": true, "commits": [
            {"id": "c5", "parents": ["c4"], "author_time": 1, "author_id": "a"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            checkout_snapshot(&h, "c5"),
            Err(SnapshotError::TruncatedAncestry { .. })
        ));
    }

    #[test]
    fn hunks_replay_in_place() {
        let pre = lines(&["a", "b", "c", "d", "e"]);
        let change = FileChange {
            path: "f".into(),
            status: ChangeStatus::Modified,
            binary: false,
            added_lines: lines(&["B1", "B2", "X"]),
            deleted_lines: lines(&["b", "e"]),
            hunks: Some(vec![
                Hunk { old_start: 1, old_len: 1, new_len: 2 },
                Hunk { old_start: 3, old_len: 0, new_len: 1 },
                Hunk { old_start: 4, old_len: 1, new_len: 0 },
            ]),
        };
        let out = apply_line_change(&pre, &change).unwrap();
        assert_eq!(out, lines(&["a", "B1", "B2", "c", "X", "d"]));
    }

    #[test]
    fn flat_modification_replaces_contiguous_block() {
        let pre = lines(&["a", "b", "c"]);
        let mut change = FileChange {
            path: "f".into(),
            status: ChangeStatus::Modified,
            binary: false,
            added_lines: lines(&["B"]),
            deleted_lines: lines(&["b"]),
            hunks: None,
        };
        assert_eq!(apply_line_change(&pre, &change).unwrap(), lines(&["a", "B", "c"]));
        change.deleted_lines = lines(&["zz"]);
        assert!(apply_line_change(&pre, &change).is_err());
        change.deleted_lines.clear();
        assert_eq!(apply_line_change(&pre, &change).unwrap(), lines(&["a", "b", "c", "B"]));
    }

    #[test]
    fn merge_replays_first_parent_only() {
        let h = history_from_fixture_str(
            r#"{"repo_id": "r", "commits": [
            {"id": "c1", "parents": [], "author_time": 1, "author_id": "a",
             "files": [{"path": "a.c", "status": "A", "added": ["1"]}]},
            {"id": "side", "parents": ["c1"], "author_time": 2, "author_id": "b",
             "files": [{"path": "s.c", "status": "A", "added": ["s"]}]},
            {"id": "main2", "parents": ["c1"], "author_time": 3, "author_id": "a",
             "files": [{"path": "m.c", "status": "A", "added": ["m"]}]},
            {"id": "merge", "parents": ["main2", "side"], "author_time": 4, "author_id": "a",
             "files": [{"path": "s.c", "status": "A", "added": ["s"]}]}]}"#,
        )
        .unwrap();
        let t = checkout_snapshot(&h, "merge").unwrap();
        assert_eq!(t.paths().collect::<Vec<_>>(), vec!["a.c", "m.c", "s.c"]);
    }
}
