//! Reference tilers written for clarity, not speed.

#![allow(dead_code)]

use forklens_core::similarity::TokenClass;

/// Straightforward greedy tiling: enumerate every start pair, measure the run
/// by slice comparison, keep the longest, mark them in (p, q) order.
pub fn naive_greedy(a: &[TokenClass], b: &[TokenClass], min_match: usize) -> usize {
    let mut ma = vec![false; a.len()];
    let mut mb = vec![false; b.len()];
    let mut total = 0;
    loop {
        let mut best = 0;
        let mut found = Vec::new();
        for p in 0..a.len() {
            for q in 0..b.len() {
                let mut l = 0;
                while p + l < a.len()
                    && q + l < b.len()
                    && !ma[p + l]
                    && !mb[q + l]
                    && a[p + l] == b[q + l]
                {
                    l += 1;
                }
                if l > best {
                    best = l;
                    found.clear();
                }
                if l == best && l > 0 {
                    found.push((p, q));
                }
            }
        }
        if best < min_match {
            return total;
        }
        for (p, q) in found {
            if (0..best).all(|k| !ma[p + k] && !mb[q + k]) {
                for k in 0..best {
                    ma[p + k] = true;
                    mb[q + k] = true;
                }
                total += best;
            }
        }
    }
}

fn projection(x: &[TokenClass], other: &[TokenClass]) -> Vec<TokenClass> {
    x.iter().copied().filter(|t| other.contains(t)).collect()
}

/// Greedy tiling made independent of argument order: orient by the
/// projections onto the shared alphabet, try both ways when they agree.
pub fn symmetric_greedy(a: &[TokenClass], b: &[TokenClass], min_match: usize) -> usize {
    let pa = projection(a, b);
    let pb = projection(b, a);
    if pa < pb {
        naive_greedy(a, b, min_match)
    } else if pb < pa {
        naive_greedy(b, a, min_match)
    } else {
        naive_greedy(a, b, min_match).max(naive_greedy(b, a, min_match))
    }
}

/// Largest coverage reachable by any set of disjoint common runs of length
/// at least `min_match`. Exponential; tiny inputs only.
pub fn optimal_tiling(a: &[TokenClass], b: &[TokenClass], min_match: usize) -> usize {
    fn go(a: &[TokenClass], b: &[TokenClass], ma: &mut [bool], mb: &mut [bool], min: usize) -> usize {
        let mut best = 0;
        for p in 0..a.len() {
            for q in 0..b.len() {
                let mut l = 0;
                while p + l < a.len() && q + l < b.len() && !ma[p + l] && !mb[q + l] && a[p + l] == b[q + l] {
                    l += 1;
                    if l >= min {
                        for k in 0..l {
                            ma[p + k] = true;
                            mb[q + k] = true;
                        }
                        best = best.max(l + go(a, b, ma, mb, min));
                        for k in 0..l {
                            ma[p + k] = false;
                            mb[q + k] = false;
                        }
                    }
                }
            }
        }
        best
    }
    go(a, b, &mut vec![false; a.len()], &mut vec![false; b.len()], min_match.max(1))
}
