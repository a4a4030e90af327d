//! Maintenance activity: feature extraction, clustering and key-attribute
//! search.

mod cluster;
mod features;
mod select;

use thiserror::Error;

pub use cluster::{
    kmeans, select_k, silhouette, standardize, ClusteringResult, ColumnStats, KSelection,
    PointSilhouette, Standardized, MAX_ITERATIONS,
};
pub use features::{
    compute_mde, extract_features, Engagement, FeatureVector, MdeScores, Popularity, UpdateStats,
    WindowStats, FEATURE_NAMES, MONTH_SECS,
};
pub use select::{best_first_attributes, AttributeSelection, DEFAULT_STOP_AFTER};

#[derive(Debug, Error, PartialEq)]
pub enum MaintenanceError {
    #[error("history has no commits at or before the analysis time")]
    EmptyHistory,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("k = {k} exceeds the {available} distinct rows available")]
    KTooLarge { k: usize, available: usize },
    #[error("k = {0} is below the minimum of 2")]
    KTooSmall(usize),
    #[error("{labels} labels for {rows} rows")]
    LabelLengthMismatch { labels: usize, rows: usize },
}
