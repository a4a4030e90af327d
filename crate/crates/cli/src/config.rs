//! Pipeline configuration.
//!
//! The configuration is a TOML document. Relative paths resolve against the
//! directory containing the file, so a config and its inputs can move
//! together.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use forklens_core::lineage::LineageConfig;
use forklens_core::similarity::{PairingMode, SimilarityConfig};
use forklens_core::vulnscan::{ScanConfig, DEFAULT_FALLBACK_FILE_LIMIT};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoEntry {
    pub repo_id: String,
    /// A history fixture (JSON) or a local git working directory.
    pub source: PathBuf,
    /// Hosting metadata fixture. Without one every counter is zero.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub max_commits: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansSection {
    /// Inclusive range of cluster counts tried by silhouette selection.
    pub k_range: [usize; 2],
    pub seed: u64,
}

impl Default for KmeansSection {
    fn default() -> Self {
        KmeansSection {
            k_range: [2, 8],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub stop_after: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            stop_after: forklens_core::maintenance::DEFAULT_STOP_AFTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VulnSection {
    pub signature_file: Option<PathBuf>,
    pub fallback_file_limit: usize,
    pub extensions: Option<Vec<String>>,
    /// Census rows report how many repositories have at least this many
    /// unpatched signatures.
    pub census_thresholds: Vec<usize>,
}

impl Default for VulnSection {
    fn default() -> Self {
        VulnSection {
            signature_file: None,
            fallback_file_limit: DEFAULT_FALLBACK_FILE_LIMIT,
            extensions: None,
            census_thresholds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrosstabSection {
    /// Similarity-to-parent thresholds for the bucketed table.
    pub similarity_buckets: Vec<f64>,
}

impl Default for CrosstabSection {
    fn default() -> Self {
        CrosstabSection {
            similarity_buckets: vec![0.9, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub repos: Vec<RepoEntry>,
    #[serde(default)]
    pub parent_repo_id: Option<String>,
    /// Analysis time in Unix seconds.
    pub as_of: i64,
    #[serde(default)]
    pub registry_file: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub kmeans: KmeansSection,
    #[serde(default)]
    pub select: SelectSection,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub lineage: LineageConfig,
    #[serde(default)]
    pub vulnscan: VulnSection,
    #[serde(default)]
    pub crosstab: CrosstabSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> PipelineError {
    PipelineError::ConfigInvalid {
        field: field.into(),
        message: message.into(),
    }
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("<file>", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Parses and validates without touching the filesystem.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let de = toml::Deserializer::new(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path == "." { "<root>".into() } else { path }, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.repos.is_empty() {
            return Err(invalid("repos", "at least one repository is required"));
        }
        let mut seen = HashSet::new();
        for (i, r) in self.repos.iter().enumerate() {
            if r.repo_id.is_empty() || r.repo_id.contains(['/', '\\']) || r.repo_id.starts_with('.') {
                return Err(invalid(format!("repos[{i}].repo_id"), format!("unusable id {:?}", r.repo_id)));
            }
            if !seen.insert(r.repo_id.as_str()) {
                return Err(invalid(format!("repos[{i}].repo_id"), format!("duplicate id {}", r.repo_id)));
            }
        }
        if let Some(p) = &self.parent_repo_id {
            if !seen.contains(p.as_str()) {
                return Err(invalid("parent_repo_id", format!("{p} is not among repos")));
            }
        }
        let [lo, hi] = self.kmeans.k_range;
        if lo < 2 || lo > hi {
            return Err(invalid("kmeans.k_range", format!("need 2 <= k_min <= k_max, got [{lo}, {hi}]")));
        }
        if self.similarity.min_match == 0 {
            return Err(invalid("similarity.min_match", "must be positive"));
        }
        if self.lineage.stride == 0 || self.lineage.window_secs <= 0 {
            return Err(invalid("lineage", "stride and window_secs must be positive"));
        }
        if !(self.lineage.default_threshold > 0.0 && self.lineage.default_threshold <= 1.0) {
            return Err(invalid("lineage.default_threshold", "must lie in (0, 1]"));
        }
        if self.ingest.max_commits == Some(0) {
            return Err(invalid("ingest.max_commits", "must be positive"));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for r in &mut self.repos {
            join(&mut r.source);
            if let Some(m) = &mut r.metadata {
                join(m);
            }
        }
        if let Some(p) = &mut self.registry_file {
            join(p);
        }
        if let Some(p) = &mut self.vulnscan.signature_file {
            join(p);
        }
        join(&mut self.output_dir);
    }

    pub fn scan_config(&self) -> ScanConfig {
        let mut cfg = ScanConfig {
            fallback_file_limit: self.vulnscan.fallback_file_limit,
            ..ScanConfig::default()
        };
        if let Some(ext) = &self.vulnscan.extensions {
            cfg.extensions = ext.clone();
        }
        cfg
    }

    /// Lineage settings with the top-level similarity settings applied.
    pub fn lineage_config(&self) -> LineageConfig {
        LineageConfig {
            similarity: self.similarity.clone(),
            ..self.lineage.clone()
        }
    }

    pub fn pairing_label(&self) -> &'static str {
        match self.similarity.pairing {
            PairingMode::Greedy => "greedy",
            PairingMode::Optimal => "optimal",
        }
    }
}
