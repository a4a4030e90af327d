//! Greedy string tiling.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::tokenize::TokenClass;

pub const DEFAULT_MIN_MATCH: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub a_start: usize,
    pub b_start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub matched_tokens: usize,
    pub total_tokens_a: usize,
    pub total_tokens_b: usize,
}

impl SimilarityScore {
    pub fn from_counts(matched: usize, total_a: usize, total_b: usize) -> Self {
        let denom = total_a + total_b;
        let value = if denom == 0 {
            0.0
        } else {
            (2 * matched) as f64 / denom as f64
        };
        SimilarityScore {
            value,
            matched_tokens: matched,
            total_tokens_a: total_a,
            total_tokens_b: total_b,
        }
    }

    pub fn swapped(self) -> Self {
        SimilarityScore {
            total_tokens_a: self.total_tokens_b,
            total_tokens_b: self.total_tokens_a,
            ..self
        }
    }
}

/// Orientation that does not depend on argument order. Each side is compared
/// through the tokens the other side also contains, so appending foreign
/// tokens to one stream cannot flip it. `None` means the projections agree
/// and both orientations have to be tried.
fn canonical_first(a: &[TokenClass], b: &[TokenClass]) -> Option<bool> {
    let alpha_a: HashSet<&TokenClass> = a.iter().collect();
    let alpha_b: HashSet<&TokenClass> = b.iter().collect();
    let ka = a.iter().filter(|t| alpha_b.contains(t));
    let kb = b.iter().filter(|t| alpha_a.contains(t));
    match ka.cmp(kb) {
        std::cmp::Ordering::Equal => None,
        o => Some(o.is_lt()),
    }
}

fn swap_tiles(tiles: Vec<Tile>) -> Vec<Tile> {
    tiles
        .into_iter()
        .map(|t| Tile {
            a_start: t.b_start,
            b_start: t.a_start,
            length: t.length,
        })
        .collect()
}

fn covered(tiles: &[Tile]) -> usize {
    tiles.iter().map(|t| t.length).sum()
}

/// Tiles `a` against `b`. The score value and the matched count are
/// independent of argument order; tiles are reported in caller orientation.
pub fn gst(a: &[TokenClass], b: &[TokenClass], min_match: usize) -> (SimilarityScore, Vec<Tile>) {
    let min_match = min_match.max(1);
    let tiles = match canonical_first(a, b) {
        Some(true) => tile_oriented(a, b, min_match),
        Some(false) => swap_tiles(tile_oriented(b, a, min_match)),
        None => {
            let fwd = tile_oriented(a, b, min_match);
            let rev = swap_tiles(tile_oriented(b, a, min_match));
            // larger coverage wins; on a tie the choice only affects tile layout
            if covered(&rev) > covered(&fwd) || (covered(&rev) == covered(&fwd) && b < a) {
                rev
            } else {
                fwd
            }
        }
    };
    let matched = covered(&tiles);
    (SimilarityScore::from_counts(matched, a.len(), b.len()), tiles)
}

fn tile_oriented(a: &[TokenClass], b: &[TokenClass], min_match: usize) -> Vec<Tile> {
    let (n, m) = (a.len(), b.len());
    if n < min_match || m < min_match {
        return Vec::new();
    }
    if a == b {
        return vec![Tile {
            a_start: 0,
            b_start: 0,
            length: n,
        }];
    }
    let (a, b) = intern(a, b);
    // Every run a round can find lies inside one maximal common run of the
    // unmarked streams, so a single DP pass collects the diagonals and later
    // rounds only rescan those.
    let mut diagonals = maximal_runs(&a, &b, min_match);
    let mut marked_a = vec![false; n];
    let mut marked_b = vec![false; m];
    let mut tiles = Vec::new();
    loop {
        let mut longest = 0usize;
        let mut starts: Vec<(usize, usize)> = Vec::new();
        diagonals.retain(|&(i, j, len)| {
            let mut alive = false;
            let mut k = 0;
            while k < len {
                if marked_a[i + k] || marked_b[j + k] {
                    k += 1;
                    continue;
                }
                let seg = k;
                while k < len && !marked_a[i + k] && !marked_b[j + k] {
                    k += 1;
                }
                let run = k - seg;
                if run >= min_match {
                    alive = true;
                    if run >= longest {
                        if run > longest {
                            longest = run;
                            starts.clear();
                        }
                        starts.push((i + seg, j + seg));
                    }
                }
            }
            alive
        });
        if longest < min_match {
            break;
        }
        starts.sort_unstable();
        for (p, q) in starts {
            let free = (0..longest).all(|k| !marked_a[p + k] && !marked_b[q + k]);
            if free {
                for k in 0..longest {
                    marked_a[p + k] = true;
                    marked_b[q + k] = true;
                }
                tiles.push(Tile {
                    a_start: p,
                    b_start: q,
                    length: longest,
                });
            }
        }
    }
    tiles
}

/// All maximal common runs `(i, j, len)` with `len >= min_match`.
fn maximal_runs(a: &[u32], b: &[u32], min_match: usize) -> Vec<(usize, usize, usize)> {
    let m = b.len();
    let mut out = Vec::new();
    // next[j] holds the run length starting at (i + 1, j)
    let mut next = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    for i in (0..a.len()).rev() {
        let ai = a[i];
        for j in (0..m).rev() {
            let len = if ai == b[j] { next[j + 1] + 1 } else { 0 };
            cur[j] = len;
            if len >= min_match && (i == 0 || j == 0 || a[i - 1] != b[j - 1]) {
                out.push((i, j, len));
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    out
}

/// Maps both streams onto dense integer ids for cheap comparisons.
fn intern(a: &[TokenClass], b: &[TokenClass]) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<TokenClass, u32> = HashMap::new();
    let mut map = |s: &[TokenClass]| -> Vec<u32> {
        s.iter()
            .map(|t| {
                let next = ids.len() as u32;
                *ids.entry(*t).or_insert(next)
            })
            .collect()
    };
    let ea = map(a);
    (ea, map(b))
}
