//! Local git backend: one `git log` invocation with zero-context patches
//! against each commit's first parent.

use std::path::Path;
use std::process::Command;

use super::{ChangeStatus, CommitRecord, FileChange, Hunk, IngestError, IngestLimits, RepoHistory};

const RECORD_SEP: u8 = 0x1e;
const FIELD_SEP: char = '\u{1f}';

pub fn load_git_history(dir: &Path, limits: IngestLimits) -> Result<RepoHistory, IngestError> {
    let unreadable = |message: String| IngestError::UnreadableSource {
        source_path: dir.display().to_string(),
        message,
    };
    let mut cmd = Command::new("git");
    cmd.arg("-C")
        .arg(dir)
        .args(["-c", "core.quotePath=false", "log", "--reverse", "--topo-order"])
        .args(["--no-color", "--no-ext-diff", "--no-textconv", "--find-renames"])
        .args(["-U0", "--diff-merges=first-parent", "-p"])
        .arg("--format=%x1e%H%x1f%P%x1f%at%x1f%ae");
    if let Some(n) = limits.max_commits {
        cmd.arg(format!("-n{n}"));
    }
    let output = cmd.output().map_err(|e| {
        unreadable(format!(
            "failed to run git ({e}); install git and make sure it is on PATH"
        ))
    })?;
    if !output.status.success() {
        return Err(unreadable(format!(
            "git log failed: {}",
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let commits = parse_log(&output.stdout).map_err(unreadable)?;
    if commits.is_empty() {
        return Err(unreadable("repository has no commits".into()));
    }
    let repo_id = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "repo".into());
    let truncated = {
        let ids: std::collections::HashSet<&str> = commits.iter().map(|c| c.id.as_str()).collect();
        commits
            .iter()
            .any(|c| c.parents.iter().any(|p| !ids.contains(p.as_str())))
    };
    RepoHistory::new(repo_id, commits, truncated)
}

#[derive(Default)]
struct PendingFile {
    change: Option<FileChange>,
    remaining_old: usize,
    remaining_new: usize,
}

fn unquote(raw: &str) -> String {
    let s = raw.trim_end();
    if !(s.starts_with('"') && s.ends_with('"') && s.len() >= 2) {
        return s.to_string();
    }
    let inner = &s[1..s.len() - 1];
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => {}
        }
    }
    out
}

fn strip_prefix_path(raw: &str, prefix: &str) -> Option<String> {
    let p = unquote(raw);
    if p == "/dev/null" {
        return None;
    }
    Some(p.strip_prefix(prefix).map(str::to_string).unwrap_or(p))
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (start, len) = match s.split_once(',') {
        Some((a, b)) => (a, b),
        None => (s, "1"),
    };
    let start = start.parse().map_err(|_| format!("bad hunk range {s:?}"))?;
    let len = len.parse().map_err(|_| format!("bad hunk range {s:?}"))?;
    Ok((start, len))
}

fn finish(pending: &mut PendingFile, out: &mut Vec<FileChange>) {
    if let Some(change) = pending.change.take() {
        out.push(change);
    }
    pending.remaining_old = 0;
    pending.remaining_new = 0;
}

pub(crate) fn parse_log(raw: &[u8]) -> Result<Vec<CommitRecord>, String> {
    let mut commits = Vec::new();
    for record in raw.split(|&b| b == RECORD_SEP).skip(1) {
        let mut lines = record.split(|&b| b == b'\n');
        let header = String::from_utf8_lossy(lines.next().unwrap_or_default()).into_owned();
        let fields: Vec<&str> = header.split(FIELD_SEP).collect();
        if fields.len() != 4 {
            return Err(format!("unexpected log header {header:?}"));
        }
        let parents = fields[1].split_whitespace().map(str::to_string).collect();
        let author_time = fields[2]
            .trim()
            .parse::<i64>()
            .map_err(|_| format!("bad author time in {header:?}"))?;
        let mut changes = Vec::new();
        let mut pending = PendingFile::default();
        for raw_line in lines {
            let line = String::from_utf8_lossy(raw_line);
            if pending.remaining_old > 0 || pending.remaining_new > 0 {
                let change = pending.change.as_mut().ok_or("hunk without file header")?;
                if let Some(rest) = line.strip_prefix('-') {
                    change.deleted_lines.push(rest.to_string());
                    pending.remaining_old -= 1;
                    continue;
                } else if let Some(rest) = line.strip_prefix('+') {
                    change.added_lines.push(rest.to_string());
                    pending.remaining_new -= 1;
                    continue;
                } else if line.starts_with('\\') {
                    continue;
                }
                return Err(format!("truncated hunk before {line:?}"));
            }
            if let Some(rest) = line.strip_prefix("diff --git ") {
                finish(&mut pending, &mut changes);
                // "a/x b/x"; unambiguous only without spaces, refined by later headers.
                let path = rest
                    .rsplit_once(" b/")
                    .map(|(_, b)| unquote(b))
                    .unwrap_or_else(|| unquote(rest));
                pending.change = Some(FileChange {
                    path,
                    status: ChangeStatus::Modified,
                    binary: false,
                    added_lines: Vec::new(),
                    deleted_lines: Vec::new(),
                    hunks: Some(Vec::new()),
                });
                continue;
            }
            let Some(change) = pending.change.as_mut() else {
                continue;
            };
            if line.starts_with("new file mode") {
                change.status = ChangeStatus::Added;
            } else if line.starts_with("deleted file mode") {
                change.status = ChangeStatus::Deleted;
            } else if let Some(rest) = line.strip_prefix("rename from ") {
                change.status = ChangeStatus::Renamed {
                    old_path: unquote(rest),
                };
            } else if let Some(rest) = line.strip_prefix("rename to ") {
                change.path = unquote(rest);
            } else if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
                change.binary = true;
            } else if let Some(rest) = line.strip_prefix("--- ") {
                if let (Some(p), ChangeStatus::Deleted) = (strip_prefix_path(rest, "a/"), &change.status) {
                    change.path = p;
                }
            } else if let Some(rest) = line.strip_prefix("+++ ") {
                if let Some(p) = strip_prefix_path(rest, "b/") {
                    change.path = p;
                }
            } else if let Some(rest) = line.strip_prefix("@@ ") {
                let mut parts = rest.split_whitespace();
                let old = parts.next().and_then(|s| s.strip_prefix('-')).ok_or("bad hunk header")?;
                let new = parts.next().and_then(|s| s.strip_prefix('+')).ok_or("bad hunk header")?;
                let (old_start, old_len) = parse_range(old)?;
                let (_, new_len) = parse_range(new)?;
                let start0 = if old_len == 0 { old_start } else { old_start - 1 };
                change.hunks.get_or_insert_with(Vec::new).push(Hunk {
                    old_start: start0,
                    old_len,
                    new_len,
                });
                pending.remaining_old = old_len;
                pending.remaining_new = new_len;
            }
        }
        finish(&mut pending, &mut changes);
        commits.push(CommitRecord {
            id: fields[0].trim().to_string(),
            parents,
            author_time,
            author_id: fields[3].trim().to_string(),
            file_changes: changes,
        });
    }
    Ok(commits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_added_modified_renamed_and_binary() {
        let log = "\x1eaaa\x1f\x1f100\x1fa@x\n\n\
diff --git a/f.c b/f.c\n\
new file mode 100644\n\
index 0000000..1111111\n\
--- /dev/null\n\
+++ b/f.c\n\
@@ -0,0 +1,2 @@\n\
+int a;\n\
+int b;\n\
\x1ebbb\x1faaa\x1f200\x1fb@x\n\n\
diff --git a/f.c b/g.c\n\
similarity index 80%\n\
rename from f.c\n\
rename to g.c\n\
--- a/f.c\n\
+++ b/g.c\n\
@@ -2 +2 @@\n\
-int b;\n\
+--- tricky;\n\
diff --git a/img.png b/img.png\n\
new file mode 100644\n\
Binary files /dev/null and b/img.png differ\n";
        let commits = parse_log(log.as_bytes()).unwrap();
        assert_eq!(commits.len(), 2);
        let root = &commits[0];
        assert_eq!(root.file_changes[0].status, ChangeStatus::Added);
        assert_eq!(root.file_changes[0].added_lines, vec!["int a;", "int b;"]);
        assert_eq!(root.file_changes[0].hunks.as_ref().unwrap()[0].old_start, 0);
        let second = &commits[1];
        assert_eq!(second.parents, vec!["aaa"]);
        let rename = &second.file_changes[0];
        assert_eq!(rename.path, "g.c");
        assert_eq!(
            rename.status,
            ChangeStatus::Renamed {
                old_path: "f.c".into()
            }
        );
        assert_eq!(rename.added_lines, vec!["--- tricky;"]);
        assert_eq!(rename.hunks.as_ref().unwrap()[0].old_start, 1);
        let bin = &second.file_changes[1];
        assert!(bin.binary);
        assert_eq!(bin.path, "img.png");
    }

    #[test]
    fn quoted_paths_are_unescaped() {
        assert_eq!(unquote("\"a\\\"b.c\""), "a\"b.c");
        assert_eq!(unquote("plain.c"), "plain.c");
    }
}
