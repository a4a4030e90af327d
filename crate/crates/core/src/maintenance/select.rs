//! Best-first search over feature subsets with a correlation-based merit.
//!
//! Merit of a subset S of size k is `sum(r_cf) / sqrt(k + 2 * sum(r_ff))`,
//! where `r_cf` is a feature's mean absolute correlation with the one-hot
//! cluster indicators and `r_ff` the absolute correlation of each feature
//! pair in S. Everything is evaluated in feature-name order so the result
//! does not depend on column order.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::MaintenanceError;

pub const DEFAULT_STOP_AFTER: usize = 5;

const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSelection {
    pub selected: Vec<String>,
    pub merit: f64,
    /// Every evaluated subset with its merit, in evaluation order.
    pub trace: Vec<(Vec<String>, f64)>,
}

fn abs_corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).abs().min(1.0)
}

struct MeritTable {
    class_corr: Vec<f64>,
    pair_corr: Vec<Vec<f64>>,
}

impl MeritTable {
    /// `subset` holds name ranks in ascending order.
    fn merit(&self, subset: &[usize]) -> f64 {
        if subset.is_empty() {
            return 0.0;
        }
        let k = subset.len() as f64;
        let num: f64 = subset.iter().map(|&f| self.class_corr[f]).sum();
        let mut pairs = 0.0;
        for (i, &f) in subset.iter().enumerate() {
            for &g in &subset[i + 1..] {
                pairs += self.pair_corr[f][g];
            }
        }
        num / (k + 2.0 * pairs).sqrt()
    }
}

/// Greedy best-first forward search from the empty subset. Stops after
/// `stop_after` consecutive expansions that fail to improve the best merit.
pub fn best_first_attributes(
    rows: &[Vec<f64>],
    labels: &[usize],
    names: &[String],
    stop_after: usize,
) -> Result<AttributeSelection, MaintenanceError> {
    if labels.len() != rows.len() {
        return Err(MaintenanceError::LabelLengthMismatch {
            labels: labels.len(),
            rows: rows.len(),
        });
    }
    let width = names.len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(MaintenanceError::InvalidInput(format!(
            "{width} feature names for rows of a different width"
        )));
    }
    if names.iter().collect::<HashSet<_>>().len() != width {
        return Err(MaintenanceError::InvalidInput("duplicate feature names".into()));
    }
    if width == 0 || rows.is_empty() {
        return Ok(AttributeSelection {
            selected: Vec::new(),
            merit: 0.0,
            trace: Vec::new(),
        });
    }

    // rank r -> original column
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let columns: Vec<Vec<f64>> = order
        .iter()
        .map(|&c| rows.iter().map(|r| r[c]).collect())
        .collect();
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let indicators: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let class_corr: Vec<f64> = columns
        .iter()
        .map(|col| {
            indicators.iter().map(|ind| abs_corr(col, ind)).sum::<f64>() / indicators.len() as f64
        })
        .collect();
    let mut pair_corr = vec![vec![0.0; width]; width];
    for i in 0..width {
        for j in i + 1..width {
            let r = abs_corr(&columns[i], &columns[j]);
            pair_corr[i][j] = r;
            pair_corr[j][i] = r;
        }
    }
    let table = MeritTable {
        class_corr,
        pair_corr,
    };
    let ranked_names = |s: &[usize]| -> Vec<String> { s.iter().map(|&r| names[order[r]].clone()).collect() };

    let mut open: Vec<(f64, Vec<usize>)> = vec![(0.0, Vec::new())];
    let mut visited: HashSet<Vec<usize>> = HashSet::from([Vec::new()]);
    let mut best: (f64, Vec<usize>) = (0.0, Vec::new());
    let mut trace = Vec::new();
    let mut stale = 0usize;
    while !open.is_empty() {
        // highest merit first; ties go to the lexicographically smaller subset
        let pick = (0..open.len())
            .max_by(|&a, &b| {
                open[a]
                    .0
                    .total_cmp(&open[b].0)
                    .then_with(|| open[b].1.cmp(&open[a].1))
            })
            .expect("open is non-empty");
        let (_, node) = open.swap_remove(pick);
        let mut improved = false;
        for f in 0..width {
            if node.contains(&f) {
                continue;
            }
            let mut child = node.clone();
            let at = child.partition_point(|&x| x < f);
            child.insert(at, f);
            if !visited.insert(child.clone()) {
                continue;
            }
            let merit = table.merit(&child);
            trace.push((ranked_names(&child), merit));
            if merit > best.0 + IMPROVEMENT_EPS {
                best = (merit, child.clone());
                improved = true;
            }
            open.push((merit, child));
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= stop_after {
                break;
            }
        }
    }
    Ok(AttributeSelection {
        selected: ranked_names(&best.1),
        merit: best.0,
        trace,
    })
}
