//! Standardization, seeded k-means and silhouette scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MaintenanceError;

/// Lloyd iteration cap.
pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    pub rows: Vec<Vec<f64>>,
    pub columns: Vec<ColumnStats>,
}

/// Z-scores every column (population std). Zero-variance columns become
/// all zeros and are flagged.
pub fn standardize(rows: &[Vec<f64>]) -> Result<Standardized, MaintenanceError> {
    if rows.len() < 2 {
        return Err(MaintenanceError::TooFewVectors(rows.len()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(MaintenanceError::InvalidInput("ragged matrix".into()));
    }
    let n = rows.len() as f64;
    let columns: Vec<ColumnStats> = (0..width)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let zero_variance = std <= 1e-12 * mean.abs().max(1.0);
            ColumnStats {
                mean,
                std,
                zero_variance,
            }
        })
        .collect();
    let out = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&columns)
                .map(|(&x, c)| if c.zero_variance { 0.0 } else { (x - c.mean) / c.std })
                .collect()
        })
        .collect();
    Ok(Standardized { rows: out, columns })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSilhouette {
    /// Mean distance to the other members of the point's cluster.
    pub a: f64,
    /// Smallest mean distance to the members of another cluster.
    pub b: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    /// Cluster index per input row.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub silhouette: f64,
    pub per_point: Vec<PointSilhouette>,
    pub iterations: usize,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn distinct_rows(rows: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.dedup();
    sorted.len()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..rows.len())
        };
        centroids.push(rows[pick].clone());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn means(rows: &[Vec<f64>], assign: &[usize], k: usize, width: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; width]; k];
    let mut counts = vec![0usize; k];
    for (r, &c) in rows.iter().zip(assign) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(r) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Moves the point farthest from its centroid (among clusters with more than
/// one member) into each empty cluster.
fn reseed_empty(rows: &[Vec<f64>], assign: &mut [usize], centroids: &mut [Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, r) in rows.iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(r, &centroids[assign[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        assign[i] = empty;
        centroids[empty] = rows[i].clone();
    }
}

/// Seeded k-means++ followed by Lloyd iterations until the assignment stops
/// changing or [`MAX_ITERATIONS`] is reached.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusteringResult, MaintenanceError> {
    if k < 2 {
        return Err(MaintenanceError::KTooSmall(k));
    }
    let available = distinct_rows(rows);
    if k > rows.len() || k > available {
        return Err(MaintenanceError::KTooLarge { k, available });
    }
    let width = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(rows, k, &mut rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut next: Vec<usize> = rows.iter().map(|r| nearest(r, &centroids).0).collect();
        reseed_empty(rows, &mut next, &mut centroids, k);
        trace.push(
            rows.iter()
                .zip(&next)
                .map(|(r, &c)| sq_dist(r, &centroids[c]))
                .sum(),
        );
        let converged = next == assign;
        assign = next;
        centroids = means(rows, &assign, k, width);
        if converged {
            break;
        }
    }
    let (silhouette, per_point) = silhouette(rows, &assign, k);
    Ok(ClusteringResult {
        k,
        assignments: assign,
        centroids,
        silhouette,
        per_point,
        iterations,
        objective_trace: trace,
    })
}

/// Per-point silhouette (Euclidean) and its arithmetic mean. Points in
/// singleton clusters score 0.
pub fn silhouette(rows: &[Vec<f64>], assign: &[usize], k: usize) -> (f64, Vec<PointSilhouette>) {
    let mut sizes = vec![0usize; k];
    assign.iter().for_each(|&c| sizes[c] += 1);
    let per_point: Vec<PointSilhouette> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut sums = vec![0.0; k];
            for (j, other) in rows.iter().enumerate() {
                if i != j {
                    sums[assign[j]] += dist(r, other);
                }
            }
            let own = assign[i];
            let a = if sizes[own] > 1 {
                sums[own] / (sizes[own] - 1) as f64
            } else {
                0.0
            };
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let b = if b.is_finite() { b } else { 0.0 };
            let s = if sizes[own] <= 1 || a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            };
            PointSilhouette { a, b, s }
        })
        .collect();
    let overall = if per_point.is_empty() {
        0.0
    } else {
        per_point.iter().map(|p| p.s).sum::<f64>() / per_point.len() as f64
    };
    (overall, per_point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub scores: Vec<(usize, f64)>,
}

/// Runs k-means for each k in `k_min..=k_max` and keeps the k with the
/// highest silhouette (smaller k wins ties).
pub fn select_k(rows: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64) -> Result<KSelection, MaintenanceError> {
    if k_min < 2 {
        return Err(MaintenanceError::KTooSmall(k_min));
    }
    if k_max > rows.len() {
        return Err(MaintenanceError::KTooLarge {
            k: k_max,
            available: rows.len(),
        });
    }
    if k_min > k_max {
        return Err(MaintenanceError::InvalidInput(format!("empty k range {k_min}..={k_max}")));
    }
    let mut scores = Vec::new();
    let mut best = (k_min, f64::NEG_INFINITY);
    for k in k_min..=k_max {
        let r = kmeans(rows, k, seed)?;
        if r.silhouette > best.1 {
            best = (k, r.silhouette);
        }
        scores.push((k, r.silhouette));
    }
    Ok(KSelection {
        best_k: best.0,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn standardize_pair() {
        let s = standardize(&col(&[1.0, 3.0])).unwrap();
        assert_eq!(s.rows, col(&[-1.0, 1.0]));
        assert_eq!(s.columns[0].mean, 2.0);
        assert_eq!(s.columns[0].std, 1.0);
    }

    #[test]
    fn standardize_constant_column() {
        let s = standardize(&col(&[7.0, 7.0, 7.0])).unwrap();
        assert_eq!(s.rows, col(&[0.0, 0.0, 0.0]));
        assert!(s.columns[0].zero_variance);
        let tiny = standardize(&col(&[0.1, 0.1, 0.1])).unwrap();
        assert!(tiny.columns[0].zero_variance);
    }

    #[test]
    fn standardize_too_few() {
        assert_eq!(standardize(&[]), Err(MaintenanceError::TooFewVectors(0)));
        assert_eq!(standardize(&col(&[1.0])), Err(MaintenanceError::TooFewVectors(1)));
    }

    #[test]
    fn two_blobs_silhouette() {
        let rows = col(&[0.0, 0.1, 10.0, 10.1]);
        let r = kmeans(&rows, 2, 7).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        // hand computation: s(0) = 1 - 0.1/10.05, s(0.1) = 1 - 0.1/9.95, mirrored
        let expected = (2.0 - 0.1 / 10.05 - 0.1 / 9.95) / 2.0;
        assert!((r.silhouette - expected).abs() < 1e-12);
        assert!((r.silhouette - 0.990).abs() < 1e-3);
    }

    #[test]
    fn singletons_score_zero() {
        let rows = col(&[0.0, 1.0, 5.0]);
        let r = kmeans(&rows, 3, 1).unwrap();
        assert_eq!(r.silhouette, 0.0);
        let mut sorted = r.assignments.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn k_bounds() {
        let rows = col(&[0.0, 1.0, 2.0]);
        assert_eq!(kmeans(&rows, 1, 0).unwrap_err(), MaintenanceError::KTooSmall(1));
        assert!(matches!(kmeans(&rows, 4, 0), Err(MaintenanceError::KTooLarge { .. })));
        let dupes = col(&[1.0, 1.0, 1.0]);
        assert!(matches!(kmeans(&dupes, 2, 0), Err(MaintenanceError::KTooLarge { .. })));
    }

    #[test]
    fn deterministic_for_seed() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 37 % 11) as f64, (i % 7) as f64]).collect();
        let a = kmeans(&rows, 3, 99).unwrap();
        let b = kmeans(&rows, 3, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn select_k_single_value_range() {
        let rows = col(&[0.0, 0.1, 10.0, 10.1]);
        let s = select_k(&rows, 2, 2, 3).unwrap();
        assert_eq!(s.best_k, 2);
        assert_eq!(s.scores.len(), 1);
    }
}
