//! Repository forensics toolkit.
//!
//! The crate is organised around the analysis stages:
//!
//! - [`ingest`]: commit histories (git or JSON fixtures), snapshot
//!   reconstruction and hosting metadata.
//! - [`maintenance`]: the 32 maintenance features, mean developer engagement,
//!   k-means with silhouette-driven k selection and best-first attribute
//!   search.
//! - [`similarity`]: C-like tokenizer with identifier abstraction, greedy
//!   string tiling and repository-level aggregation.
//! - [`lineage`]: fork inference from shared history or bulk uploads.
//! - [`vulnscan`]: vulnerability signature matching over diffs with a full
//!   checkout oracle.
//! - [`analytics`]: cross tabulation against survivability registries and
//!   the statistical tests used in the reports.
//! - [`synth`]: deterministic synthetic corpora used by tests and the demo.

pub mod analytics;
pub mod ingest;
pub mod lineage;
pub mod maintenance;
pub mod similarity;
pub mod stats;
pub mod synth;
pub mod vulnscan;

pub use ingest::{
    checkout_snapshot, load_history, ChangeStatus, CommitRecord, FileChange, HostingMetadata,
    Hunk, IngestLimits, RepoHistory, SnapshotTree,
};
