//! Portable JSON history fixtures.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChangeStatus, CommitRecord, FileChange, Hunk, IngestError, RepoHistory};

#[derive(Debug, Serialize, Deserialize)]
struct FixtureDoc {
    repo_id: String,
    #[serde(default)]
    truncated: bool,
    commits: Vec<FixtureCommit>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureCommit {
    id: String,
    parents: Vec<String>,
    author_time: i64,
    author_id: String,
    #[serde(default)]
    files: Vec<FixtureFile>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
enum StatusCode {
    #[serde(rename = "A")]
    Added,
    #[serde(rename = "M")]
    Modified,
    #[serde(rename = "D")]
    Deleted,
    #[serde(rename = "R")]
    Renamed,
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureFile {
    path: String,
    status: StatusCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    old_path: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    binary: bool,
    #[serde(default)]
    added: Vec<String>,
    #[serde(default)]
    deleted: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hunks: Option<Vec<Hunk>>,
}

/// Converts a serde path (`commits[1].parents[0]`) into a JSON pointer.
fn to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

pub fn history_from_fixture_str(text: &str) -> Result<RepoHistory, IngestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: FixtureDoc = serde_path_to_error::deserialize(de)
        .map_err(|e| IngestError::malformed(to_pointer(e.path()), e.inner().to_string()))?;
    let mut commits = Vec::with_capacity(doc.commits.len());
    for (i, c) in doc.commits.into_iter().enumerate() {
        let mut changes = Vec::with_capacity(c.files.len());
        for (j, f) in c.files.into_iter().enumerate() {
            let status = match (f.status, f.old_path) {
                (StatusCode::Renamed, Some(old_path)) => ChangeStatus::Renamed { old_path },
                (StatusCode::Renamed, None) => {
                    return Err(IngestError::malformed(
                        format!("/commits/{i}/files/{j}/old_path"),
                        "renamed file requires old_path",
                    ))
                }
                (_, Some(_)) => {
                    return Err(IngestError::malformed(
                        format!("/commits/{i}/files/{j}/old_path"),
                        "old_path is only valid with status R",
                    ))
                }
                (StatusCode::Added, None) => ChangeStatus::Added,
                (StatusCode::Modified, None) => ChangeStatus::Modified,
                (StatusCode::Deleted, None) => ChangeStatus::Deleted,
            };
            changes.push(FileChange {
                path: f.path,
                status,
                binary: f.binary,
                added_lines: f.added,
                deleted_lines: f.deleted,
                hunks: f.hunks,
            });
        }
        commits.push(CommitRecord {
            id: c.id,
            parents: c.parents,
            author_time: c.author_time,
            author_id: c.author_id,
            file_changes: changes,
        });
    }
    RepoHistory::new(doc.repo_id, commits, doc.truncated)
}

pub fn load_fixture(path: &Path) -> Result<RepoHistory, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::UnreadableSource {
        source_path: path.display().to_string(),
        message: e.to_string(),
    })?;
    history_from_fixture_str(&text)
}

/// Serializes a history to the fixture format (pretty-printed, stable order).
pub fn history_to_fixture_string(history: &RepoHistory) -> String {
    let doc = FixtureDoc {
        repo_id: history.repo_id().to_string(),
        truncated: history.truncated(),
        commits: history
            .commits()
            .iter()
            .map(|c| FixtureCommit {
                id: c.id.clone(),
                parents: c.parents.clone(),
                author_time: c.author_time,
                author_id: c.author_id.clone(),
                files: c
                    .file_changes
                    .iter()
                    .map(|f| {
                        let (status, old_path) = match &f.status {
                            ChangeStatus::Added => (StatusCode::Added, None),
                            ChangeStatus::Modified => (StatusCode::Modified, None),
                            ChangeStatus::Deleted => (StatusCode::Deleted, None),
                            ChangeStatus::Renamed { old_path } => {
                                (StatusCode::Renamed, Some(old_path.clone()))
                            }
                        };
                        FixtureFile {
                            path: f.path.clone(),
                            status,
                            old_path,
                            binary: f.binary,
                            added: f.added_lines.clone(),
                            deleted: f.deleted_lines.clone(),
                            hunks: f.hunks.clone(),
                        }
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("fixture serialization is infallible")
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"{
      "repo_id": "demo",
      "commits": [
        {"id": "c1", "parents": [], "author_time": 100, "author_id": "a",
         "files": [{"path": "a.c", "status": "A", "added": ["int x;"], "deleted": []}]},
        {"id": "c2", "parents": ["c1"], "author_time": 200, "author_id": "b", "files": []},
        {"id": "c3", "parents": ["c2"], "author_time": 300, "author_id": "a", "files": []}
      ]
    }"#;

    #[test]
    fn linear_fixture_loads() {
        let h = history_from_fixture_str(LINEAR).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.head().id, "c3");
        assert!(!h.truncated());
    }

    #[test]
    fn round_trip_is_identity() {
        let h = history_from_fixture_str(LINEAR).unwrap();
        let again = history_from_fixture_str(&history_to_fixture_string(&h)).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn unknown_parent_without_truncation_flag() {
        let text = r#"{"repo_id": "r", "commits": [
            {"id": "c1", "parents": [], "author_time": 1, "author_id": "a"},
            {"id": "c2", "parents": ["p9"], "author_time": 2, "author_id": "a"}]}"#;
        match history_from_fixture_str(text) {
            Err(IngestError::MalformedFixture { pointer, .. }) => {
                assert_eq!(pointer, "/commits/1/parents/0")
            }
            other => panic!("expected MalformedFixture, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_json_pointer() {
        let text = r#"{"repo_id": "r", "commits": [
            {"id": "c1", "parents": [], "author_time": "soon", "author_id": "a"}]}"#;
        match history_from_fixture_str(text) {
            Err(IngestError::MalformedFixture { pointer, .. }) => {
                assert_eq!(pointer, "/commits/0/author_time")
            }
            other => panic!("expected MalformedFixture, got {other:?}"),
        }
        let bad_status = r#"{"repo_id": "r", "commits": [
            {"id": "c1", "parents": [], "author_time": 1, "author_id": "a",
             "files": [{"path": "x", "status": "Q"}]}]}"#;
        match history_from_fixture_str(bad_status) {
            Err(IngestError::MalformedFixture { pointer, .. }) => {
                assert_eq!(pointer, "/commits/0/files/0/status")
            }
            other => panic!("expected MalformedFixture, got {other:?}"),
        }
    }

    #[test]
    fn rename_requires_old_path() {
        let text = r#"{"repo_id": "r", "commits": [
            {"id": "c1", "parents": [], "author_time": 1, "author_id": "a",
             "files": [{"path": "x", "status": "R"}]}]}"#;
        assert!(history_from_fixture_str(text).is_err());
    }

    #[test]
    fn cycle_in_fixture() {
        let text = r#"{"repo_id": "r", "commits": [
            {"id": "A", "parents": [], "author_time": 1, "author_id": "a"},
            {"id": "B", "parents": ["A", "C"], "author_time": 2, "author_id": "a"},
            {"id": "C", "parents": ["B"], "author_time": 3, "author_id": "a"}]}"#;
        assert!(matches!(
            history_from_fixture_str(text),
            Err(IngestError::CycleDetected { .. })
        ));
    }
}
