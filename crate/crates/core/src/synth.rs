//! Deterministic synthetic histories and C sources.
//!
//! Used by the test suites and by the bundled demo corpus. Everything here is
//! a pure function of its seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{ChangeStatus, CommitRecord, FileChange, Hunk, RepoHistory};
use crate::vulnscan::{MatchMode, VulnSignature};

/// Incrementally records file operations and seals them into commits.
#[derive(Debug, Clone)]
pub struct HistoryBuilder {
    repo_id: String,
    files: BTreeMap<String, Vec<String>>,
    pending: Vec<FileChange>,
    commits: Vec<CommitRecord>,
}

fn lines_of(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}

impl HistoryBuilder {
    pub fn new(repo_id: &str) -> Self {
        HistoryBuilder {
            repo_id: repo_id.to_string(),
            files: BTreeMap::new(),
            pending: Vec::new(),
            commits: Vec::new(),
        }
    }

    /// Copy of this builder's history under another repository id. Pending
    /// changes are carried over.
    pub fn fork(&self, repo_id: &str) -> Self {
        HistoryBuilder {
            repo_id: repo_id.to_string(),
            ..self.clone()
        }
    }

    pub fn add_file(&mut self, path: &str, text: &str) -> &mut Self {
        assert!(!self.files.contains_key(path), "{path} already exists");
        let lines = lines_of(text);
        self.files.insert(path.to_string(), lines.clone());
        self.pending.push(FileChange::added(path, lines));
        self
    }

    pub fn delete_file(&mut self, path: &str) -> &mut Self {
        let lines = self.files.remove(path).unwrap_or_else(|| panic!("{path} missing"));
        self.pending.push(FileChange::deleted(path, lines));
        self
    }

    /// Replaces `del` lines starting at 0-based `start` with `new_lines`.
    pub fn edit(&mut self, path: &str, start: usize, del: usize, new_lines: &[&str]) -> &mut Self {
        let file = self.files.get_mut(path).unwrap_or_else(|| panic!("{path} missing"));
        assert!(start + del <= file.len(), "edit past end of {path}");
        let added: Vec<String> = new_lines.iter().map(|s| s.to_string()).collect();
        let removed: Vec<String> = file.splice(start..start + del, added.clone()).collect();
        self.pending.push(FileChange {
            path: path.to_string(),
            status: ChangeStatus::Modified,
            binary: false,
            hunks: Some(vec![Hunk {
                old_start: start,
                old_len: removed.len(),
                new_len: added.len(),
            }]),
            added_lines: added,
            deleted_lines: removed,
        });
        self
    }

    pub fn append(&mut self, path: &str, new_lines: &[&str]) -> &mut Self {
        let at = self.files.get(path).map_or(0, Vec::len);
        self.edit(path, at, 0, new_lines)
    }

    pub fn rename(&mut self, from: &str, to: &str) -> &mut Self {
        let lines = self.files.remove(from).unwrap_or_else(|| panic!("{from} missing"));
        self.files.insert(to.to_string(), lines);
        self.pending.push(FileChange {
            path: to.to_string(),
            status: ChangeStatus::Renamed {
                old_path: from.to_string(),
            },
            binary: false,
            added_lines: Vec::new(),
            deleted_lines: Vec::new(),
            hunks: Some(Vec::new()),
        });
        self
    }

    /// Seals pending changes into a commit whose first parent is the
    /// previous commit.
    pub fn commit(&mut self, id: &str, time: i64, author: &str) -> &mut Self {
        let parents = self.commits.last().map(|c| vec![c.id.clone()]).unwrap_or_default();
        self.commits.push(CommitRecord {
            id: id.to_string(),
            parents,
            author_time: time,
            author_id: author.to_string(),
            file_changes: std::mem::take(&mut self.pending),
        });
        self
    }

    pub fn text(&self, path: &str) -> Option<String> {
        self.files.get(path).map(|l| l.join("\n"))
    }

    pub fn line_count(&self, path: &str) -> usize {
        self.files.get(path).map_or(0, Vec::len)
    }

    pub fn paths(&self) -> Vec<String> {
        self.files.keys().cloned().collect()
    }

    pub fn last_commit(&self) -> Option<&CommitRecord> {
        self.commits.last()
    }

    pub fn commit_count(&self) -> usize {
        self.commits.len()
    }

    pub fn build(&self) -> RepoHistory {
        RepoHistory::new(&self.repo_id, self.commits.clone(), false)
            .expect("builder produces well-formed histories")
    }
}

const TYPES: &[&str] = &["int", "long", "unsigned", "double", "char", "size_t"];
const OPS: &[&str] = &["+", "-", "*", "^", "|", "&", "<<", ">>", "%"];
const CMPS: &[&str] = &["<", ">", "<=", ">=", "==", "!="];

fn pick<'a>(rng: &mut impl Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn ident(rng: &mut impl Rng) -> String {
    const SYL: &[&str] = &["ba", "ko", "ri", "tem", "nu", "sal", "vex", "po", "lid", "ar"];
    let n = rng.random_range(2..4);
    (0..n).map(|_| pick(rng, SYL)).collect()
}

fn expr(rng: &mut impl Rng, vars: &[String]) -> String {
    let a = &vars[rng.random_range(0..vars.len())];
    let b = &vars[rng.random_range(0..vars.len())];
    match rng.random_range(0..4) {
        0 => format!("{a} {} {}", pick(rng, OPS), rng.random_range(1..97)),
        1 => format!("({a} {} {b}) {} {}", pick(rng, OPS), pick(rng, OPS), rng.random_range(1..9)),
        2 => format!("{a}[{}] {} {b}", rng.random_range(0..16), pick(rng, OPS)),
        _ => format!("{}({a}, {b})", ident(rng)),
    }
}

fn statement(rng: &mut impl Rng, vars: &[String], depth: usize, out: &mut Vec<String>) {
    let pad = "    ".repeat(depth);
    let v = &vars[rng.random_range(0..vars.len())];
    match rng.random_range(0..7) {
        0 | 1 => out.push(format!("{pad}{v} = {};", expr(rng, vars))),
        2 if depth < 3 => {
            out.push(format!("{pad}if ({v} {} {}) {{", pick(rng, CMPS), rng.random_range(0..50)));
            for _ in 0..rng.random_range(1..4) {
                statement(rng, vars, depth + 1, out);
            }
            out.push(format!("{pad}}}"));
        }
        3 if depth < 3 => {
            let i = ident(rng);
            out.push(format!("{pad}for (int {i} = 0; {i} < {}; {i}++) {{", rng.random_range(2..64)));
            for _ in 0..rng.random_range(1..3) {
                statement(rng, vars, depth + 1, out);
            }
            out.push(format!("{pad}}}"));
        }
        4 if depth < 3 => {
            out.push(format!("{pad}while ({v} {} {}) {{", pick(rng, CMPS), rng.random_range(0..9)));
            statement(rng, vars, depth + 1, out);
            out.push(format!("{pad}    {v}--;"));
            out.push(format!("{pad}}}"));
        }
        5 => out.push(format!("{pad}{}(\"{}\", {v});", ident(rng), ident(rng))),
        _ => out.push(format!("{pad}{v} {}= {};", pick(rng, &["+", "-", "*", "|"]), rng.random_range(1..31))),
    }
}

/// A syntactically plausible C translation unit with `functions` functions.
pub fn c_source(rng: &mut impl Rng, functions: usize) -> String {
    let mut out = vec![format!("#include <{}.h>", ident(rng)), String::new()];
    for _ in 0..functions {
        let params: Vec<String> = (0..rng.random_range(1..4)).map(|_| ident(rng)).collect();
        let sig: Vec<String> = params.iter().map(|p| format!("{} {p}", pick(rng, TYPES))).collect();
        out.push(format!("static {} {}({}) {{", pick(rng, TYPES), ident(rng), sig.join(", ")));
        let mut vars = params.clone();
        for _ in 0..rng.random_range(1..3) {
            let v = ident(rng);
            out.push(format!("    {} {v} = {};", pick(rng, TYPES), rng.random_range(0..100)));
            vars.push(v);
        }
        for _ in 0..rng.random_range(3..8) {
            statement(rng, &vars, 1, &mut out);
        }
        out.push(format!("    return {};", vars[0]));
        out.push("}".into());
        out.push(String::new());
    }
    out.join("\n")
}

/// Seeded convenience wrapper around [`c_source`].
pub fn c_source_seeded(seed: u64, functions: usize) -> String {
    c_source(&mut ChaCha8Rng::seed_from_u64(seed), functions)
}

/// Replaces every whole-word occurrence of `from` with `to`.
pub fn rename_word(text: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let is_word = |b: u8| b == b'_' || b.is_ascii_alphanumeric();
    let mut i = 0;
    while i < text.len() {
        if text[i..].starts_with(from)
            && (i == 0 || !is_word(bytes[i - 1]))
            && bytes.get(i + from.len()).is_none_or(|&b| !is_word(b))
        {
            out.push_str(to);
            i += from.len();
        } else {
            let ch = text[i..].chars().next().expect("in bounds");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

/// A parent repository plus children of every kind the lineage sweep
/// distinguishes.
#[derive(Debug, Clone)]
pub struct LineageCorpus {
    pub parent: RepoHistory,
    /// (child, expected fork commit, expected fork time)
    pub h1_forks: Vec<(RepoHistory, String, i64)>,
    /// (child, parent commit whose snapshot was uploaded)
    pub bulk_upload: (RepoHistory, String),
    pub unrelated: RepoHistory,
}

pub const CORPUS_T0: i64 = 1_500_000_000;
const DAY: i64 = 86_400;

/// Grows `b` by one commit of random edits over its C files.
fn random_commit(b: &mut HistoryBuilder, rng: &mut ChaCha8Rng, id: &str, time: i64, author: &str) {
    let mut paths = b.paths();
    paths.retain(|p| p != PLANTED_PATH);
    let path = &paths[rng.random_range(0..paths.len())];
    let n = b.line_count(path);
    match rng.random_range(0..3) {
        0 if n > 4 => {
            let at = rng.random_range(0..n - 2);
            b.edit(path, at, 1, &[&format!("    /* tweak {} */ x{} += 1;", id, rng.random_range(0..9))]);
        }
        1 => {
            let fresh = c_source(rng, 1);
            let lines: Vec<&str> = fresh.lines().collect();
            b.append(path, &lines);
        }
        _ => {
            b.edit(path, n.saturating_sub(1).min(n), 0, &["int extra_guard = 0;"]);
        }
    }
    b.commit(id, time, author);
}

/// Parent with `parent_commits` commits, three shared-history forks, one
/// bulk-upload fork and one unrelated repository.
pub fn lineage_corpus(seed: u64, parent_commits: usize) -> LineageCorpus {
    build_corpus(seed, parent_commits, false).0
}

/// File holding the planted vulnerable function in [`demo_corpus`].
pub const PLANTED_PATH: &str = "src/net.c";

/// A lineage corpus whose parent ships [`VULN_FRAGMENT`] from its first
/// commit and patches it six commits before its head. The last shared-history
/// fork patches on its own, the bulk upload copies already patched code and
/// the unrelated repository never contains it.
///
/// Returns the corpus and the parent's patch commit with its time.
pub fn demo_corpus(seed: u64, parent_commits: usize) -> (LineageCorpus, (String, i64)) {
    assert!(parent_commits >= 24, "the planted patch must follow every shared-history fork");
    let (c, patch) = build_corpus(seed, parent_commits, true);
    (c, patch.expect("planted"))
}

fn planted_source() -> String {
    format!("int copy_packet(char *buf, const char *src, int len, int cap) {{\n    {VULN_FRAGMENT}\n    return len;\n}}")
}

fn apply_patch(b: &mut HistoryBuilder, id: &str, time: i64, author: &str) {
    b.edit(
        PLANTED_PATH,
        1,
        1,
        &[&format!("    {PATCH_FRAGMENT}"), "    memcpy(buf, src, (size_t)len);"],
    );
    b.commit(id, time, author);
}

fn build_corpus(seed: u64, parent_commits: usize, plant: bool) -> (LineageCorpus, Option<(String, i64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parent = HistoryBuilder::new("parent");
    for f in 0..4 {
        parent.add_file(&format!("src/mod{f}.c"), &c_source(&mut rng, 6));
    }
    if plant {
        parent.add_file(PLANTED_PATH, &planted_source());
    }
    parent.add_file("README.md", "parent project\n");
    parent.commit("p000", CORPUS_T0, "alice");
    let patch_at = parent_commits.saturating_sub(6);
    let mut patch = None;
    let mut history = vec![parent.clone()];
    for i in 1..parent_commits {
        let author = if i % 3 == 0 { "bob" } else { "alice" };
        let (id, time) = (format!("p{i:03}"), CORPUS_T0 + i as i64 * DAY);
        if plant && i == patch_at {
            apply_patch(&mut parent, &id, time, author);
            patch = Some((id, time));
        } else {
            random_commit(&mut parent, &mut rng, &id, time, author);
        }
        history.push(parent.clone());
    }

    let mut h1_forks = Vec::new();
    for (k, at) in [parent_commits / 3, parent_commits / 2, (2 * parent_commits) / 3]
        .into_iter()
        .enumerate()
    {
        let at = at.max(DEFAULT_PROBE);
        let base = &history[at];
        let mut child = base.fork(&format!("fork{k}"));
        let fork_commit = base.last_commit().expect("non-empty").id.clone();
        let t_fork = base.last_commit().expect("non-empty").author_time + DAY / 2 + k as i64;
        for j in 0..5 {
            let (id, time) = (format!("f{k}_{j}"), t_fork + j as i64 * DAY);
            if plant && k == 2 && j == 2 {
                apply_patch(&mut child, &id, time, "carol");
            } else {
                random_commit(&mut child, &mut rng, &id, time, "carol");
            }
        }
        h1_forks.push((child.build(), fork_commit, t_fork));
    }

    let uploaded_at = parent_commits - 3;
    let source = &history[uploaded_at];
    let mut bulk = HistoryBuilder::new("bulkcoin");
    bulk.add_file("README.md", "a new coin\n");
    bulk.commit("b000", source.last_commit().expect("non-empty").author_time + 10 * DAY, "dave");
    for p in source.paths().iter().filter(|p| p.ends_with(".c")) {
        bulk.add_file(p, &source.text(p).expect("listed path"));
    }
    bulk.commit("b001", source.last_commit().expect("non-empty").author_time + 11 * DAY, "dave");
    for j in 0..3 {
        random_commit(&mut bulk, &mut rng, &format!("b{:03}", j + 2), CORPUS_T0 + (parent_commits as i64 + 20 + j) * DAY, "dave");
    }
    let uploaded_commit = source.last_commit().expect("non-empty").id.clone();

    let mut other = HistoryBuilder::new("unrelated");
    for f in 0..4 {
        other.add_file(&format!("lib/u{f}.c"), &c_source(&mut rng, 6));
    }
    other.commit("u000", CORPUS_T0 + 5 * DAY, "erin");
    for j in 1..6 {
        random_commit(&mut other, &mut rng, &format!("u{j:03}"), CORPUS_T0 + (5 + j as i64) * DAY, "erin");
    }

    let corpus = LineageCorpus {
        parent: parent.build(),
        h1_forks,
        bulk_upload: (bulk.build(), uploaded_commit),
        unrelated: other.build(),
    };
    (corpus, patch)
}

/// Vulnerable and fixed code used by the synthetic scan fixtures.
pub const VULN_FRAGMENT: &str = "memcpy(buf, src, len);";
pub const PATCH_FRAGMENT: &str = "if (len > cap) return -1;";

pub fn synthetic_signature(cve_id: &str, reference_patch_time: i64) -> VulnSignature {
    VulnSignature {
        cve_id: cve_id.to_string(),
        cvss: 5.0,
        category: "Overflow".into(),
        reference_patch_time,
        match_mode: MatchMode::All,
        vuln_fragments: vec![VULN_FRAGMENT.into()],
        patch_fragments: vec![PATCH_FRAGMENT.into()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VulnFixtureShape {
    pub commits: usize,
    pub files: usize,
    pub functions_per_file: usize,
    /// Plant at least one commit touching more than 30 files.
    pub force_bulk: bool,
    /// Plant a fragment assembled across two commits.
    pub force_straddle: bool,
}

/// A random history over C files in which the vulnerable fragment comes and
/// goes: whole, reflowed across lines, assembled from halves in different
/// commits, joined by deleting the lines between its halves, moved by
/// renames and dropped with deleted files.
pub fn vuln_fixture(seed: u64, shape: VulnFixtureShape) -> RepoHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = HistoryBuilder::new(&format!("vulnfix{seed}"));
    for f in 0..shape.files.max(1) {
        b.add_file(&format!("src/f{f}.c"), &c_source(&mut rng, shape.functions_per_file.max(1)));
    }
    b.commit("v000", CORPUS_T0, "init");
    let bulk_at = if shape.force_bulk { 1 + rng.random_range(0..shape.commits.max(2) - 1) } else { usize::MAX };
    let straddle_at = if shape.force_straddle { rng.random_range(1..shape.commits.max(3) - 1) } else { usize::MAX };
    let mut next_file = shape.files.max(1);
    let mut pending_half: Option<(String, usize)> = None;
    for i in 1..shape.commits {
        let id = format!("v{i:03}");
        let time = CORPUS_T0 + i as i64 * 3_600 * 7;
        let paths = b.paths();
        let path = paths[rng.random_range(0..paths.len())].clone();
        let n = b.line_count(&path);
        let at = rng.random_range(0..=n);
        if let Some((p, line)) = pending_half.take() {
            if b.line_count(&p) > line {
                b.edit(&p, line + 1, 0, &["  src, len);"]);
                b.commit(&id, time, "dev");
                continue;
            }
        }
        if i == bulk_at {
            for k in 0..31 {
                let body = if k == 7 && rng.random_bool(0.5) {
                    format!("void bulk{k}(void) {{\n  {VULN_FRAGMENT}\n}}")
                } else {
                    c_source(&mut rng, 1)
                };
                b.add_file(&format!("gen/g{next_file}_{k}.c"), &body);
            }
            next_file += 1;
            b.commit(&id, time, "bot");
            continue;
        }
        if i == straddle_at {
            b.edit(&path, at, 0, &["  memcpy(buf,"]);
            pending_half = Some((path, at));
            b.commit(&id, time, "dev");
            continue;
        }
        match rng.random_range(0..12) {
            0 | 1 => {
                b.edit(&path, at, 0, &[&format!("  {VULN_FRAGMENT}")]);
            }
            2 => {
                b.edit(&path, at, 0, &["  memcpy(", "      buf,", "  src,", "      len", "  );"]);
            }
            3 | 4 => {
                b.edit(&path, at, 0, &[&format!("  {PATCH_FRAGMENT}")]);
            }
            5 => {
                // drop any line mentioning memcpy in this file
                let text = b.text(&path).unwrap_or_default();
                if let Some(l) = text.lines().position(|l| l.contains("memcpy")) {
                    b.edit(&path, l, 1, &[]);
                } else if n > 0 {
                    b.edit(&path, rng.random_range(0..n), 1, &[]);
                } else {
                    b.append(&path, &["int pad;"]);
                }
            }
            6 => {
                // two halves separated by a line that a later deletion removes
                b.edit(&path, at, 0, &["  memcpy(buf, src,", "  trace();", "  len);"]);
                b.commit(&id, time, "dev");
                let id = format!("{id}j");
                b.edit(&path, at + 1, 1, &[]);
                b.commit(&id, time + 60, "dev");
                continue;
            }
            7 if paths.len() > 1 => {
                if rng.random_bool(0.5) {
                    b.rename(&path, &format!("src/r{next_file}.c"));
                } else {
                    b.delete_file(&path);
                }
                next_file += 1;
            }
            8 => {
                // rename out of and back into the scanned extensions
                let txt = format!("doc/n{next_file}.txt");
                b.rename(&path, &txt);
                next_file += 1;
                b.commit(&id, time, "dev");
                b.rename(&txt, &format!("src/back{next_file}.c"));
                next_file += 1;
                b.commit(&format!("{id}r"), time + 60, "dev");
                continue;
            }
            9 => {
                // whitespace-only reflow of a line
                if n > 0 {
                    let l = rng.random_range(0..n);
                    let text = b.text(&path).unwrap_or_default();
                    let line = text.lines().nth(l).unwrap_or("").to_string();
                    b.edit(&path, l, 1, &[&format!("\t{}  ", line.trim())]);
                } else {
                    b.append(&path, &["int pad;"]);
                }
            }
            _ => {
                let fresh = c_source(&mut rng, 1);
                let lines: Vec<&str> = fresh.lines().collect();
                b.edit(&path, at, 0, &lines);
            }
        }
        b.commit(&id, time, "dev");
    }
    b.build()
}

const DEFAULT_PROBE: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::checkout_snapshot;

    #[test]
    fn builder_replays() {
        let mut b = HistoryBuilder::new("r");
        b.add_file("a.c", "one\ntwo\nthree\n").commit("c1", 10, "x");
        b.edit("a.c", 1, 1, &["TWO", "2"]).rename("a.c", "b.c").commit("c2", 20, "x");
        let h = b.build();
        let snap = checkout_snapshot(&h, "c2").unwrap();
        assert_eq!(snap.text("b.c").unwrap(), b.text("b.c").unwrap());
        assert_eq!(b.text("b.c").unwrap(), "one\nTWO\n2\nthree");
    }

    #[test]
    fn sources_are_seeded() {
        assert_eq!(c_source_seeded(7, 3), c_source_seeded(7, 3));
        assert_ne!(c_source_seeded(7, 3), c_source_seeded(8, 3));
    }

    #[test]
    fn rename_whole_words() {
        assert_eq!(rename_word("bitcoin bitcoins x_bitcoin bitcoin;", "bitcoin", "acoin"), "acoin bitcoins x_bitcoin acoin;");
    }

    #[test]
    fn corpus_replays_everywhere() {
        let c = lineage_corpus(3, 30);
        for h in [&c.parent, &c.unrelated, &c.bulk_upload.0] {
            checkout_snapshot(h, &h.head().id).unwrap();
        }
        for (h, _, _) in &c.h1_forks {
            checkout_snapshot(h, &h.head().id).unwrap();
        }
    }

    #[test]
    fn demo_statuses_cover_every_case() {
        use crate::vulnscan::{scan_history, ScanConfig, VulnStatus};
        let (c, (patch_commit, patch_time)) = demo_corpus(5, 24);
        let sig = synthetic_signature("CVE-DEMO-0001", patch_time);
        let status = |h: &RepoHistory| scan_history(h, &sig, &ScanConfig::default()).unwrap();
        let p = status(&c.parent);
        assert_eq!(p.status, VulnStatus::Patched);
        assert_eq!(p.patched_commit.as_deref(), Some(patch_commit.as_str()));
        assert_eq!(p.time_to_patch_secs, Some(0));
        let forks: Vec<VulnStatus> = c.h1_forks.iter().map(|f| status(&f.0).status).collect();
        assert_eq!(forks, [VulnStatus::Vulnerable, VulnStatus::Vulnerable, VulnStatus::Patched]);
        // the upload copies code that was already fixed
        assert_eq!(status(&c.bulk_upload.0).status, VulnStatus::NeverPresent);
        assert_eq!(status(&c.unrelated).status, VulnStatus::NeverPresent);
    }
}
