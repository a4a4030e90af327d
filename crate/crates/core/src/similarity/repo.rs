//! Repository-level similarity: tokenize eligible files, tile every file pair,
//! pair files one-to-one and aggregate.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use pathfinding::prelude::{kuhn_munkres, Matrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gst::{gst, SimilarityScore, DEFAULT_MIN_MATCH};
use super::tokenize::{tokenize, Dialect, TokenClass};
use super::SimilarityError;
use crate::ingest::SnapshotTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    #[default]
    Greedy,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub min_match: usize,
    pub extensions: Vec<String>,
    pub pairing: PairingMode,
    pub dialect: Dialect,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            min_match: DEFAULT_MIN_MATCH,
            extensions: [".c", ".cc", ".cpp", ".cxx", ".h", ".hpp"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            pairing: PairingMode::Greedy,
            dialect: Dialect::CLike,
        }
    }
}

impl SimilarityConfig {
    pub fn is_eligible(&self, path: &str) -> bool {
        let lower = path.to_ascii_lowercase();
        self.extensions
            .iter()
            .any(|e| lower.ends_with(&e.to_ascii_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilePair {
    pub path_a: String,
    pub path_b: String,
    pub value: f64,
    pub matched_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoSimilarity {
    pub score: SimilarityScore,
    pub pairs: Vec<FilePair>,
    pub unpaired_a: Vec<String>,
    pub unpaired_b: Vec<String>,
}

type Fingerprint = (u64, usize);

struct Tokenized {
    fp: Fingerprint,
    tokens: Arc<Vec<TokenClass>>,
    counts: Arc<HashMap<TokenClass, usize>>,
}

struct FileEntry {
    path: String,
    tok: Tokenized,
}

/// Similarity evaluator that memoises tokenization and pairwise tiling by
/// file content, so repeated comparisons against one parent stay cheap.
pub struct SimilarityEngine {
    cfg: SimilarityConfig,
    tokens: Mutex<HashMap<Fingerprint, (Arc<Vec<TokenClass>>, Arc<HashMap<TokenClass, usize>>)>>,
    pairs: Mutex<HashMap<(Fingerprint, Fingerprint), usize>>,
}

fn fingerprint(text: &str) -> Fingerprint {
    let mut h = DefaultHasher::new();
    text.hash(&mut h);
    (h.finish(), text.len())
}

impl SimilarityEngine {
    pub fn new(cfg: SimilarityConfig) -> Self {
        SimilarityEngine {
            cfg,
            tokens: Mutex::new(HashMap::new()),
            pairs: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.cfg
    }

    fn tokenize_text(&self, text: &str) -> Tokenized {
        let fp = fingerprint(text);
        if let Some((t, c)) = self.tokens.lock().expect("token cache").get(&fp) {
            return Tokenized {
                fp,
                tokens: t.clone(),
                counts: c.clone(),
            };
        }
        let tokens = tokenize(text, self.cfg.dialect).tokens;
        let mut counts = HashMap::new();
        for t in &tokens {
            *counts.entry(*t).or_insert(0) += 1;
        }
        let (tokens, counts) = (Arc::new(tokens), Arc::new(counts));
        self.tokens
            .lock()
            .expect("token cache")
            .insert(fp, (tokens.clone(), counts.clone()));
        Tokenized { fp, tokens, counts }
    }

    fn eligible(&self, snap: &SnapshotTree) -> Vec<FileEntry> {
        let files: Vec<(&str, String)> = snap
            .iter()
            .filter(|(p, c)| !c.binary && self.cfg.is_eligible(p))
            .map(|(p, c)| (p, c.text()))
            .collect();
        files
            .par_iter()
            .map(|(p, text)| FileEntry {
                path: p.to_string(),
                tok: self.tokenize_text(text),
            })
            .collect()
    }

    fn matched(&self, a: &Tokenized, b: &Tokenized) -> usize {
        let key = if a.fp <= b.fp { (a.fp, b.fp) } else { (b.fp, a.fp) };
        if let Some(&m) = self.pairs.lock().expect("pair cache").get(&key) {
            return m;
        }
        let (small, large) = if a.counts.len() <= b.counts.len() {
            (&a.counts, &b.counts)
        } else {
            (&b.counts, &a.counts)
        };
        let bound: usize = small
            .iter()
            .map(|(t, &n)| n.min(large.get(t).copied().unwrap_or(0)))
            .sum();
        let m = if bound < self.cfg.min_match {
            0
        } else {
            gst(&a.tokens, &b.tokens, self.cfg.min_match).0.matched_tokens
        };
        self.pairs.lock().expect("pair cache").insert(key, m);
        m
    }

    /// Compares two snapshots. The aggregate value does not depend on
    /// argument order.
    pub fn compare(&self, a: &SnapshotTree, b: &SnapshotTree) -> Result<RepoSimilarity, SimilarityError> {
        let fa = self.eligible(a);
        let fb = self.eligible(b);
        if fa.is_empty() || fb.is_empty() {
            return Err(SimilarityError::NoEligibleFiles {
                side: if fa.is_empty() { "a" } else { "b" },
            });
        }
        fn key(f: &[FileEntry]) -> Vec<(&str, Fingerprint)> {
            f.iter().map(|e| (e.path.as_str(), e.tok.fp)).collect()
        }
        if key(&fa) <= key(&fb) {
            Ok(self.compare_oriented(&fa, &fb))
        } else {
            let r = self.compare_oriented(&fb, &fa);
            Ok(RepoSimilarity {
                score: r.score.swapped(),
                pairs: r
                    .pairs
                    .into_iter()
                    .map(|p| FilePair {
                        path_a: p.path_b,
                        path_b: p.path_a,
                        ..p
                    })
                    .collect(),
                unpaired_a: r.unpaired_b,
                unpaired_b: r.unpaired_a,
            })
        }
    }

    fn compare_oriented(&self, fa: &[FileEntry], fb: &[FileEntry]) -> RepoSimilarity {
        let total_a: usize = fa.iter().map(|e| e.tok.tokens.len()).sum();
        let total_b: usize = fb.iter().map(|e| e.tok.tokens.len()).sum();
        let grid: Vec<(usize, usize)> = (0..fa.len())
            .flat_map(|i| (0..fb.len()).map(move |j| (i, j)))
            .collect();
        let matched: Vec<usize> = grid
            .par_iter()
            .map(|&(i, j)| self.matched(&fa[i].tok, &fb[j].tok))
            .collect();
        let m = |i: usize, j: usize| matched[i * fb.len() + j];
        let value = |i: usize, j: usize| {
            let d = fa[i].tok.tokens.len() + fb[j].tok.tokens.len();
            if d == 0 {
                0.0
            } else {
                (2 * m(i, j)) as f64 / d as f64
            }
        };

        let chosen: Vec<(usize, usize)> = match self.cfg.pairing {
            PairingMode::Greedy => {
                let mut cands: Vec<(usize, usize)> =
                    grid.iter().copied().filter(|&(i, j)| m(i, j) > 0).collect();
                cands.sort_by(|&(i1, j1), &(i2, j2)| {
                    value(i2, j2)
                        .total_cmp(&value(i1, j1))
                        .then_with(|| fa[i1].path.cmp(&fa[i2].path))
                        .then_with(|| fb[j1].path.cmp(&fb[j2].path))
                });
                let mut used_a = vec![false; fa.len()];
                let mut used_b = vec![false; fb.len()];
                let mut out = Vec::new();
                for (i, j) in cands {
                    if !used_a[i] && !used_b[j] {
                        used_a[i] = true;
                        used_b[j] = true;
                        out.push((i, j));
                    }
                }
                out
            }
            PairingMode::Optimal => {
                let transpose = fa.len() > fb.len();
                let (r, c) = if transpose {
                    (fb.len(), fa.len())
                } else {
                    (fa.len(), fb.len())
                };
                let weights = Matrix::from_fn(r, c, |(x, y)| {
                    let (i, j) = if transpose { (y, x) } else { (x, y) };
                    m(i, j) as i64
                });
                let (_, assign) = kuhn_munkres(&weights);
                assign
                    .into_iter()
                    .enumerate()
                    .map(|(x, y)| if transpose { (y, x) } else { (x, y) })
                    .filter(|&(i, j)| m(i, j) > 0)
                    .collect()
            }
        };

        let mut pairs: Vec<FilePair> = chosen
            .iter()
            .map(|&(i, j)| FilePair {
                path_a: fa[i].path.clone(),
                path_b: fb[j].path.clone(),
                value: value(i, j),
                matched_tokens: m(i, j),
            })
            .collect();
        pairs.sort_by(|x, y| x.path_a.cmp(&y.path_a).then_with(|| x.path_b.cmp(&y.path_b)));
        let unpaired = |files: &[FileEntry], used: &dyn Fn(usize) -> bool| -> Vec<String> {
            (0..files.len())
                .filter(|&k| !used(k))
                .map(|k| files[k].path.clone())
                .collect()
        };
        let unpaired_a = unpaired(fa, &|i| chosen.iter().any(|&(x, _)| x == i));
        let unpaired_b = unpaired(fb, &|j| chosen.iter().any(|&(_, y)| y == j));
        let matched_total: usize = pairs.iter().map(|p| p.matched_tokens).sum();
        RepoSimilarity {
            score: SimilarityScore::from_counts(matched_total, total_a, total_b),
            pairs,
            unpaired_a,
            unpaired_b,
        }
    }
}

/// One-shot comparison with a fresh engine.
pub fn repo_similarity(
    a: &SnapshotTree,
    b: &SnapshotTree,
    cfg: &SimilarityConfig,
) -> Result<RepoSimilarity, SimilarityError> {
    SimilarityEngine::new(cfg.clone()).compare(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const F1: &str = "int add(int a, int b) {\n  int c = a + b;\n  if (c > 10) { c = c - 1; }\n  return c;\n}\n";
    const F2: &str = "struct s { double d; };\nvoid g(struct s *p) { while (p->d < 3.0) p->d *= 2.0; }\n";

    #[test]
    fn identical_snapshot() {
        let s = SnapshotTree::from_texts([("a.c", F1), ("b.h", F2)]);
        let r = repo_similarity(&s, &s, &SimilarityConfig::default()).unwrap();
        assert_eq!(r.score.value, 1.0);
        assert_eq!(r.pairs.len(), 2);
    }

    #[test]
    fn unmatched_file_dilutes() {
        let a = SnapshotTree::from_texts([("f1.c", F1)]);
        let b = SnapshotTree::from_texts([("f1.c", F1), ("f2.c", F2)]);
        let r = repo_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        let ta = r.score.total_tokens_a as f64;
        let tb = r.score.total_tokens_b as f64;
        assert!((r.score.value - 2.0 * ta / (ta + tb)).abs() < 1e-12);
        assert_eq!(r.unpaired_b, vec!["f2.c"]);
    }

    #[test]
    fn no_eligible_files() {
        let a = SnapshotTree::from_texts([("README.md", "hello")]);
        let b = SnapshotTree::from_texts([("x.c", F1)]);
        assert!(matches!(
            repo_similarity(&a, &b, &SimilarityConfig::default()),
            Err(SimilarityError::NoEligibleFiles { side: "a" })
        ));
    }

    #[test]
    fn optimal_pairing_matches_greedy_on_clear_cases() {
        let a = SnapshotTree::from_texts([("x.c", F1), ("y.c", F2)]);
        let b = SnapshotTree::from_texts([("p.c", F2), ("q.c", F1)]);
        let greedy = repo_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        let cfg = SimilarityConfig {
            pairing: PairingMode::Optimal,
            ..Default::default()
        };
        let optimal = repo_similarity(&a, &b, &cfg).unwrap();
        assert_eq!(greedy.score, optimal.score);
        assert_eq!(greedy.pairs, optimal.pairs);
        assert_eq!(greedy.score.value, 1.0);
    }

    #[test]
    fn symmetric_value() {
        let a = SnapshotTree::from_texts([("x.c", F1), ("z.c", "int q;")]);
        let b = SnapshotTree::from_texts([("p.c", F2), ("q.c", F1)]);
        let ab = repo_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        let ba = repo_similarity(&b, &a, &SimilarityConfig::default()).unwrap();
        assert_eq!(ab.score.value, ba.score.value);
        assert_eq!(ab.pairs[0].path_a, ba.pairs[0].path_b);
    }
}
