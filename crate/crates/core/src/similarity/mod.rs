//! Token-level code similarity.

mod gst;
mod repo;
mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gst::{gst, SimilarityScore, Tile, DEFAULT_MIN_MATCH};
pub use repo::{
    repo_similarity, FilePair, PairingMode, RepoSimilarity, SimilarityConfig, SimilarityEngine,
};
pub use tokenize::{tokenize, Dialect, TokenClass, TokenOrigin, TokenStream};

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("snapshot {side} has no eligible source files")]
    NoEligibleFiles { side: &'static str },
    #[error("no scores to summarise")]
    EmptyInput,
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub score: f64,
    pub fraction: f64,
}

/// Empirical CDF: one point per distinct score, ascending.
pub fn similarity_cdf(scores: &[f64]) -> Result<Vec<CdfPoint>, SimilarityError> {
    if scores.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(SimilarityError::OutOfRange(bad));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, s) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(p) if p.score == *s => p.fraction = fraction,
            _ => out.push(CdfPoint { score: *s, fraction }),
        }
    }
    Ok(out)
}
