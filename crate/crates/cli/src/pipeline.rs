//! Stage orchestration.
//!
//! Every stage reads its inputs from the output directory and writes plain
//! files back into it, so any stage can be rerun on its own once its
//! dependencies exist. The run manifest is written last.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use forklens_core::analytics::{
    crosstab, crosstab_buckets, kruskal_wallis, parse_registry, pearson, summary_stats, Bucket,
    CrossTab, SurvivabilityRecord,
};
use forklens_core::ingest::{
    checkout_snapshot, history_from_fixture_str, history_to_fixture_string, load_history,
    load_metadata_fixture, HostingMetadata, IngestLimits, RepoHistory,
};
use forklens_core::lineage::{lineage_sweep, ForkReport};
use forklens_core::maintenance::{
    best_first_attributes, extract_features, kmeans, select_k, standardize, FEATURE_NAMES,
};
use forklens_core::similarity::{similarity_cdf, SimilarityEngine};
use forklens_core::vulnscan::{
    census_buckets, load_signatures, patch_time_stats, scan_corpus, vuln_census, VulnFinding,
    VulnStatus,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{info, warn};

use crate::config::PipelineConfig;
use crate::output::{csv_bytes, opt, sha256_hex, write_atomic, StageIo};
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Features,
    Cluster,
    SelectFeatures,
    Similarity,
    Lineage,
    Vulnscan,
    Crosstab,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Features,
        Stage::Cluster,
        Stage::SelectFeatures,
        Stage::Similarity,
        Stage::Lineage,
        Stage::Vulnscan,
        Stage::Crosstab,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::SelectFeatures => "select-features",
            Stage::Similarity => "similarity",
            Stage::Lineage => "lineage",
            Stage::Vulnscan => "vulnscan",
            Stage::Crosstab => "crosstab",
            Stage::Stats => "stats",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::SelectFeatures => "select",
            other => other.name(),
        }
    }

    /// Stages the config enables. Lineage needs a parent, vulnscan a
    /// signature file and crosstab a registry.
    pub fn enabled(cfg: &PipelineConfig) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| match s {
                Stage::Lineage => cfg.parent_repo_id.is_some(),
                Stage::Vulnscan => cfg.vulnscan.signature_file.is_some(),
                Stage::Crosstab => cfg.registry_file.is_some(),
                _ => true,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Skip {
    pub repo_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_ms: u64,
    pub skipped: Vec<Skip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    /// Stage records in pipeline order; stages from earlier invocations are
    /// kept until rerun.
    pub stages: Vec<StageRecord>,
    pub skipped_csv_digest: String,
}

impl RunManifest {
    /// Every output digest across stages, keyed by relative path.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.clone())
            .collect()
    }
}

pub const MANIFEST: &str = "manifest.json";
pub const SKIPPED: &str = "skipped.csv";

/// Outcome of one invocation.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Repositories skipped by the stages run in this invocation.
    pub skipped: usize,
}

fn config_hash(cfg: &PipelineConfig) -> String {
    // the output location does not change what is computed
    let mut c = cfg.clone();
    c.output_dir = Default::default();
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

/// Runs `stages` in pipeline order and merges their records into the
/// manifest found in the output directory.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunOutcome, PipelineError> {
    let root = cfg.output_dir.as_path();
    std::fs::create_dir_all(root).map_err(|e| PipelineError::Io {
        path: root.display().to_string(),
        message: e.to_string(),
    })?;
    let selected: BTreeSet<Stage> = stages.iter().copied().collect();
    let hash = config_hash(cfg);
    let mut records: BTreeMap<Stage, StageRecord> = previous_records(root, &hash);
    let mut skipped_now = 0;
    for stage in selected {
        info!(stage = stage.name(), "starting");
        let start = Instant::now();
        let mut io = StageIo::new(root, stage.name());
        io.reset_dir(stage.dir())?;
        let skipped = run_stage(stage, cfg, &mut io)?;
        for s in &skipped {
            warn!(stage = stage.name(), repo = %s.repo_id, reason = %s.reason, "skipped");
        }
        skipped_now += skipped.len();
        let record = StageRecord {
            stage: stage.name().to_string(),
            inputs: io.inputs,
            outputs: io.outputs,
            wall_clock_ms: start.elapsed().as_millis() as u64,
            skipped,
        };
        info!(stage = stage.name(), ms = record.wall_clock_ms, "finished");
        records.insert(stage, record);
    }

    let rows: Vec<Vec<String>> = records
        .values()
        .flat_map(|r| {
            r.skipped
                .iter()
                .map(|s| vec![r.stage.clone(), s.repo_id.clone(), s.reason.clone()])
        })
        .collect();
    let skipped_bytes = csv_bytes(&["stage", "repo_id", "reason"], rows);
    write_atomic(&root.join(SKIPPED), &skipped_bytes)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        stages: records.into_values().collect(),
        skipped_csv_digest: sha256_hex(&skipped_bytes),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&root.join(MANIFEST), &bytes)?;
    Ok(RunOutcome {
        manifest,
        skipped: skipped_now,
    })
}

/// Stage records from an earlier manifest written under the same config.
fn previous_records(root: &Path, hash: &str) -> BTreeMap<Stage, StageRecord> {
    let Ok(text) = std::fs::read_to_string(root.join(MANIFEST)) else {
        return BTreeMap::new();
    };
    let Ok(m) = serde_json::from_str::<RunManifest>(&text) else {
        warn!("ignoring unreadable manifest");
        return BTreeMap::new();
    };
    if m.config_hash != hash {
        return BTreeMap::new();
    }
    m.stages
        .into_iter()
        .filter_map(|r| Stage::ALL.into_iter().find(|s| s.name() == r.stage).map(|s| (s, r)))
        .collect()
}

fn run_stage(stage: Stage, cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    match stage {
        Stage::Ingest => ingest(cfg, io),
        Stage::Features => features(cfg, io),
        Stage::Cluster => cluster(cfg, io),
        Stage::SelectFeatures => select_features(cfg, io),
        Stage::Similarity => similarity(cfg, io),
        Stage::Lineage => lineage(cfg, io),
        Stage::Vulnscan => vulnscan(cfg, io),
        Stage::Crosstab => crosstab_stage(cfg, io),
        Stage::Stats => stats(cfg, io),
    }
}

fn failed(stage: Stage, context: impl Into<String>, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::StageFailed {
        stage: stage.name(),
        context: context.into(),
        message: err.to_string(),
    }
}

fn skip(repo_id: &str, err: impl std::fmt::Display) -> Skip {
    Skip {
        repo_id: repo_id.to_string(),
        reason: err.to_string(),
    }
}

const INGEST_SUMMARY: &str = "ingest/summary.csv";
const FEATURES_CSV: &str = "features/features.csv";
const ASSIGNMENTS_CSV: &str = "cluster/assignments.csv";
const SIMILARITY_SUMMARY: &str = "similarity/summary.json";
const FINDINGS_CSV: &str = "vulnscan/findings.csv";

fn history_path(repo_id: &str) -> String {
    format!("ingest/histories/{repo_id}.json")
}

fn metadata_path(repo_id: &str) -> String {
    format!("ingest/metadata/{repo_id}.json")
}

fn file_digest(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| sha256_hex(&b))
}

fn ingest(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let limits = IngestLimits {
        max_commits: cfg.ingest.max_commits,
    };
    let loaded: Vec<_> = cfg
        .repos
        .par_iter()
        .map(|r| {
            let history = load_history(&r.source, limits).map_err(|e| e.to_string())?;
            if history.repo_id() != r.repo_id && r.source.is_file() {
                warn!(repo = %r.repo_id, fixture_id = history.repo_id(), "fixture id differs; using the configured id");
            }
            let history = RepoHistory::new(r.repo_id.clone(), history.commits().to_vec(), history.truncated())
                .map_err(|e| e.to_string())?;
            let meta = match &r.metadata {
                Some(p) => Some(load_metadata_fixture(p, &r.repo_id).map_err(|e| e.to_string())?),
                None => None,
            };
            Ok::<_, String>((history, meta))
        })
        .collect();

    let mut skipped = Vec::new();
    let mut summary = Vec::new();
    for (r, outcome) in cfg.repos.iter().zip(loaded) {
        let label = format!("source:{}", r.repo_id);
        let digest = if r.source.is_file() {
            file_digest(&r.source)
        } else {
            None
        };
        match outcome {
            Err(e) => skipped.push(skip(&r.repo_id, e)),
            Ok((history, meta)) => {
                io.record_external(label, digest.unwrap_or_else(|| format!("git:{}", history.head().id)));
                if let Some(p) = &r.metadata {
                    io.record_external(format!("metadata:{}", r.repo_id), file_digest(p).unwrap_or_default());
                }
                io.write(&history_path(&r.repo_id), history_to_fixture_string(&history).as_bytes())?;
                let meta = meta.unwrap_or_else(|| zero_metadata(&r.repo_id));
                io.write_json(&metadata_path(&r.repo_id), &metadata_doc(&meta))?;
                summary.push(vec![
                    r.repo_id.clone(),
                    history.len().to_string(),
                    history.head().id.clone(),
                    history.truncated().to_string(),
                ]);
            }
        }
    }
    io.write(INGEST_SUMMARY, &csv_bytes(&["repo_id", "commits", "head", "truncated"], summary))?;
    Ok(skipped)
}

fn zero_metadata(repo_id: &str) -> HostingMetadata {
    HostingMetadata {
        repo_id: repo_id.to_string(),
        watch: 0,
        star: 0,
        fork_count: 0,
        issues_total: 0,
        issues_open: 0,
        issues_closed: 0,
        branches: 0,
        releases: 0,
        pull_requests: 0,
        fetched_at: 0,
    }
}

/// Counters only: the fetch time would make reruns differ.
fn metadata_doc(m: &HostingMetadata) -> serde_json::Value {
    json!({
        "repo_id": m.repo_id,
        "watch": m.watch,
        "star": m.star,
        "fork_count": m.fork_count,
        "issues_total": m.issues_total,
        "issues_open": m.issues_open,
        "issues_closed": m.issues_closed,
        "branches": m.branches,
        "releases": m.releases,
        "pull_requests": m.pull_requests,
    })
}

fn parse_csv(text: &str) -> Result<Vec<csv::StringRecord>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).records().collect()
}

/// Repository ids that survived ingest, in config order.
fn ingested(io: &mut StageIo<'_>, stage: Stage) -> Result<Vec<String>, PipelineError> {
    let text = io.read_string(INGEST_SUMMARY)?;
    let rows = parse_csv(&text).map_err(|e| failed(stage, INGEST_SUMMARY, e))?;
    Ok(rows.iter().map(|r| r[0].to_string()).collect())
}

fn read_history(io: &mut StageIo<'_>, stage: Stage, repo_id: &str) -> Result<RepoHistory, PipelineError> {
    let rel = history_path(repo_id);
    let text = io.read_string(&rel)?;
    history_from_fixture_str(&text).map_err(|e| failed(stage, rel, e))
}

fn read_histories(io: &mut StageIo<'_>, stage: Stage) -> Result<Vec<RepoHistory>, PipelineError> {
    let ids = ingested(io, stage)?;
    ids.iter().map(|id| read_history(io, stage, id)).collect()
}

fn features(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let histories = read_histories(io, Stage::Features)?;
    let mut metas = Vec::new();
    for h in &histories {
        let rel = metadata_path(h.repo_id());
        let text = io.read_string(&rel)?;
        let mut m = forklens_core::ingest::parse_metadata_fixture(&text, h.repo_id())
            .map_err(|e| failed(Stage::Features, rel, e))?;
        m.fetched_at = 0;
        metas.push(m);
    }
    let results: Vec<_> = histories
        .par_iter()
        .zip(&metas)
        .map(|(h, m)| extract_features(h, m, cfg.as_of))
        .collect();
    let mut skipped = Vec::new();
    let mut rows = Vec::new();
    for (h, r) in histories.iter().zip(results) {
        match r {
            Ok(f) => rows.push(
                std::iter::once(h.repo_id().to_string())
                    .chain(f.to_array().iter().map(|v| v.to_string()))
                    .collect::<Vec<_>>(),
            ),
            Err(e) => skipped.push(skip(h.repo_id(), e)),
        }
    }
    let header: Vec<&str> = std::iter::once("repo_id").chain(FEATURE_NAMES).collect();
    io.write(FEATURES_CSV, &csv_bytes(&header, rows))?;
    Ok(skipped)
}

/// Feature rows keyed by repository id, in file order.
fn read_features(io: &mut StageIo<'_>, stage: Stage) -> Result<Vec<(String, [f64; 32])>, PipelineError> {
    let text = io.read_string(FEATURES_CSV)?;
    let rows = parse_csv(&text).map_err(|e| failed(stage, FEATURES_CSV, e))?;
    rows.iter()
        .map(|r| {
            let mut v = [0.0; 32];
            if r.len() != 33 {
                return Err(failed(stage, FEATURES_CSV, format!("row with {} cells", r.len())));
            }
            for (k, cell) in r.iter().skip(1).enumerate() {
                v[k] = cell.parse().map_err(|e| failed(stage, FEATURES_CSV, e))?;
            }
            Ok((r[0].to_string(), v))
        })
        .collect()
}

fn cluster(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let feats = read_features(io, Stage::Cluster)?;
    let raw: Vec<Vec<f64>> = feats.iter().map(|(_, v)| v.to_vec()).collect();
    let std = standardize(&raw).map_err(|e| failed(Stage::Cluster, "standardize", e))?;
    let distinct = std
        .rows
        .iter()
        .map(|r| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len();
    let [k_min, k_max] = cfg.kmeans.k_range;
    let k_hi = k_max.min(distinct);
    if k_hi < k_min {
        return Err(failed(
            Stage::Cluster,
            "kmeans.k_range",
            format!("only {distinct} distinct feature vectors for k_min = {k_min}"),
        ));
    }
    if k_hi < k_max {
        info!(k_max, k_hi, "k range capped at the number of distinct feature vectors");
    }
    let seed = cfg.kmeans.seed;
    let sel = select_k(&std.rows, k_min, k_hi, seed).map_err(|e| failed(Stage::Cluster, "select_k", e))?;
    let best = kmeans(&std.rows, sel.best_k, seed).map_err(|e| failed(Stage::Cluster, "kmeans", e))?;
    let rows = feats.iter().enumerate().map(|(i, (id, _))| {
        vec![
            id.clone(),
            best.assignments[i].to_string(),
            best.per_point[i].s.to_string(),
        ]
    });
    io.write(ASSIGNMENTS_CSV, &csv_bytes(&["repo_id", "cluster", "silhouette_point"], rows))?;
    io.write_json(
        "cluster/summary.json",
        &json!({
            "k": best.k,
            "silhouette": best.silhouette,
            "seed": seed,
            "k_scores": sel.scores,
            "iterations": best.iterations,
            "centroids": best.centroids,
            "feature_names": FEATURE_NAMES,
            "standardization": std.columns,
        }),
    )?;
    Ok(Vec::new())
}

fn read_assignments(io: &mut StageIo<'_>, stage: Stage) -> Result<BTreeMap<String, usize>, PipelineError> {
    let text = io.read_string(ASSIGNMENTS_CSV)?;
    let rows = parse_csv(&text).map_err(|e| failed(stage, ASSIGNMENTS_CSV, e))?;
    rows.iter()
        .map(|r| {
            let c = r[1].parse().map_err(|e| failed(stage, ASSIGNMENTS_CSV, e))?;
            Ok((r[0].to_string(), c))
        })
        .collect()
}

fn select_features(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let feats = read_features(io, Stage::SelectFeatures)?;
    let assign = read_assignments(io, Stage::SelectFeatures)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (id, v) in &feats {
        let Some(&c) = assign.get(id) else {
            return Err(failed(Stage::SelectFeatures, id.clone(), "no cluster assignment"));
        };
        rows.push(v.to_vec());
        labels.push(c);
    }
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let sel = best_first_attributes(&rows, &labels, &names, cfg.select.stop_after)
        .map_err(|e| failed(Stage::SelectFeatures, "best_first", e))?;
    io.write_json("select/attributes.json", &sel)?;
    Ok(Vec::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairSummary {
    repo_a: String,
    repo_b: String,
    value: f64,
    matched_tokens: usize,
    total_tokens_a: usize,
    total_tokens_b: usize,
    file_pairs: usize,
    unpaired_a: usize,
    unpaired_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimilaritySummary {
    /// Repository scores aggregate one-to-one file pairs.
    aggregation: String,
    pairing: String,
    min_match: usize,
    parent: Option<String>,
    results: Vec<PairSummary>,
}

fn similarity(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let histories = read_histories(io, Stage::Similarity)?;
    let heads: Vec<_> = histories
        .par_iter()
        .map(|h| checkout_snapshot(h, &h.head().id))
        .collect();
    let mut skipped = Vec::new();
    let mut snaps = Vec::new();
    for (h, s) in histories.iter().zip(heads) {
        match s {
            Ok(s) => snaps.push((h.repo_id().to_string(), s)),
            Err(e) => skipped.push(skip(h.repo_id(), e)),
        }
    }
    let pairs: Vec<(usize, usize)> = match &cfg.parent_repo_id {
        Some(p) => match snaps.iter().position(|(id, _)| id == p) {
            Some(pi) => (0..snaps.len()).filter(|&i| i != pi).map(|i| (i, pi)).collect(),
            None => return Err(failed(Stage::Similarity, p.clone(), "parent repository was not ingested")),
        },
        None => (0..snaps.len())
            .flat_map(|i| (i + 1..snaps.len()).map(move |j| (i, j)))
            .collect(),
    };
    let engine = SimilarityEngine::new(cfg.similarity.clone());
    let scored: Vec<_> = pairs
        .par_iter()
        .map(|&(i, j)| engine.compare(&snaps[i].1, &snaps[j].1))
        .collect();
    let mut results = Vec::new();
    for (&(i, j), r) in pairs.iter().zip(scored) {
        let (a, b) = (&snaps[i].0, &snaps[j].0);
        match r {
            Ok(r) => {
                let rows = r.pairs.iter().map(|p| {
                    vec![p.path_a.clone(), p.path_b.clone(), p.value.to_string(), p.matched_tokens.to_string()]
                });
                io.write(
                    &format!("similarity/pairs/{a}__{b}.csv"),
                    &csv_bytes(&["path_a", "path_b", "value", "matched_tokens"], rows),
                )?;
                results.push(PairSummary {
                    repo_a: a.clone(),
                    repo_b: b.clone(),
                    value: r.score.value,
                    matched_tokens: r.score.matched_tokens,
                    total_tokens_a: r.score.total_tokens_a,
                    total_tokens_b: r.score.total_tokens_b,
                    file_pairs: r.pairs.len(),
                    unpaired_a: r.unpaired_a.len(),
                    unpaired_b: r.unpaired_b.len(),
                });
            }
            Err(e) => skipped.push(skip(a, format!("similarity with {b}: {e}"))),
        }
    }
    let scores: Vec<f64> = results.iter().map(|r| r.value).collect();
    let cdf = if scores.is_empty() {
        Vec::new()
    } else {
        similarity_cdf(&scores).map_err(|e| failed(Stage::Similarity, "cdf", e))?
    };
    io.write(
        "similarity/cdf.csv",
        &csv_bytes(
            &["score", "fraction"],
            cdf.iter().map(|p| vec![p.score.to_string(), p.fraction.to_string()]),
        ),
    )?;
    io.write_json(
        SIMILARITY_SUMMARY,
        &SimilaritySummary {
            aggregation: "file-pairing".into(),
            pairing: cfg.pairing_label().into(),
            min_match: cfg.similarity.min_match,
            parent: cfg.parent_repo_id.clone(),
            results,
        },
    )?;
    Ok(skipped)
}

fn report_row(r: &ForkReport) -> Vec<String> {
    vec![
        r.child_id.clone(),
        r.parent_id.clone(),
        format!("{:?}", r.heuristic),
        format!("{:?}", r.verdict),
        opt(r.fork_time),
        opt(r.parent_version.clone()),
        opt(r.similarity_at_fork),
        opt(r.fork_commit_child.clone()),
        r.sampled.to_string(),
        opt(r.note.clone()),
    ]
}

fn lineage(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let Some(parent_id) = cfg.parent_repo_id.clone() else {
        return Err(PipelineError::ConfigInvalid {
            field: "parent_repo_id".into(),
            message: "the lineage stage needs a parent repository".into(),
        });
    };
    let ids = ingested(io, Stage::Lineage)?;
    if !ids.contains(&parent_id) {
        return Err(failed(Stage::Lineage, parent_id, "parent repository was not ingested"));
    }
    let parent = read_history(io, Stage::Lineage, &parent_id)?;
    let mut children = Vec::new();
    for id in ids.iter().filter(|id| **id != parent_id) {
        children.push(read_history(io, Stage::Lineage, id)?);
    }
    let sweep = lineage_sweep(&children, &parent, &cfg.lineage_config())
        .map_err(|e| failed(Stage::Lineage, parent_id.clone(), e))?;
    let header = [
        "child",
        "parent",
        "heuristic",
        "verdict",
        "fork_time",
        "parent_version",
        "similarity_at_fork",
        "fork_commit_child",
        "sampled",
        "note",
    ];
    io.write("lineage/report.csv", &csv_bytes(&header, sweep.reports.iter().map(report_row)))?;
    io.write_json(
        "lineage/threshold.json",
        &json!({
            "threshold": sweep.threshold,
            "source": if sweep.derivation.is_some() { "derived" } else { "default" },
            "derivation": sweep.derivation,
        }),
    )?;
    Ok(sweep.failures.iter().map(|(id, e)| skip(id, e)).collect())
}

fn status_label(s: VulnStatus) -> &'static str {
    match s {
        VulnStatus::Vulnerable => "Vulnerable",
        VulnStatus::Patched => "Patched",
        VulnStatus::NeverPresent => "NeverPresent",
    }
}

fn vulnscan(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let Some(sig_path) = cfg.vulnscan.signature_file.clone() else {
        return Err(PipelineError::ConfigInvalid {
            field: "vulnscan.signature_file".into(),
            message: "the vulnscan stage needs a signature file".into(),
        });
    };
    let sigs = load_signatures(&sig_path).map_err(|e| PipelineError::ConfigInvalid {
        field: "vulnscan.signature_file".into(),
        message: e.to_string(),
    })?;
    io.record_external("signatures".into(), file_digest(&sig_path).unwrap_or_default());
    let histories = read_histories(io, Stage::Vulnscan)?;
    let results = scan_corpus(&histories, &sigs, &cfg.scan_config());
    let mut skipped = BTreeMap::new();
    let mut findings: Vec<VulnFinding> = Vec::new();
    for (repo, cve, r) in results {
        match r {
            Ok(f) => findings.push(f),
            Err(e) => {
                skipped.entry(repo.clone()).or_insert_with(|| skip(&repo, format!("{cve}: {e}")));
            }
        }
    }
    // a repository with any failed signature is dropped entirely
    findings.retain(|f| !skipped.contains_key(&f.repo_id));
    findings.sort_by(|a, b| (&a.repo_id, &a.cve_id).cmp(&(&b.repo_id, &b.cve_id)));
    let rows = findings.iter().map(|f| {
        vec![
            f.repo_id.clone(),
            f.cve_id.clone(),
            status_label(f.status).to_string(),
            opt(f.introduced_at),
            opt(f.patched_at),
            opt(f.time_to_patch_secs.map(|s| s as f64 / 86_400.0)),
            opt(f.introduced_commit.clone()),
            opt(f.patched_commit.clone()),
        ]
    });
    let header = [
        "repo_id",
        "cve_id",
        "status",
        "introduced_at",
        "patched_at",
        "time_to_patch_days",
        "introduced_commit",
        "patched_commit",
    ];
    io.write(FINDINGS_CSV, &csv_bytes(&header, rows))?;
    let census = vuln_census(&findings).map_err(|e| failed(Stage::Vulnscan, "census", e))?;
    io.write(
        "vulnscan/census.csv",
        &csv_bytes(
            &["repo_id", "unpatched_count"],
            census.iter().map(|c| vec![c.repo_id.clone(), c.unpatched_count.to_string()]),
        ),
    )?;
    let patch = patch_time_stats(&findings).ok();
    io.write_json(
        "vulnscan/summary.json",
        &json!({
            "signatures": sigs.len(),
            "repositories": census.len(),
            "patch_stats": patch,
            "census_buckets": census_buckets(&census, &cfg.vulnscan.census_thresholds)
                .into_iter()
                .map(|(t, n)| json!({"at_least": t, "repositories": n}))
                .collect::<Vec<_>>(),
        }),
    )?;
    Ok(skipped.into_values().collect())
}

fn read_findings(io: &mut StageIo<'_>, stage: Stage) -> Result<Vec<(String, String, String, Option<f64>)>, PipelineError> {
    let text = io.read_string(FINDINGS_CSV)?;
    let rows = parse_csv(&text).map_err(|e| failed(stage, FINDINGS_CSV, e))?;
    rows.iter()
        .map(|r| {
            let days = if r[5].is_empty() {
                None
            } else {
                Some(r[5].parse().map_err(|e| failed(stage, FINDINGS_CSV, e))?)
            };
            Ok((r[0].to_string(), r[1].to_string(), r[2].to_string(), days))
        })
        .collect()
}

/// Unpatched signature counts per repository.
fn unpatched_counts(findings: &[(String, String, String, Option<f64>)]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (repo, _, status, _) in findings {
        *out.entry(repo.clone()).or_insert(0) += usize::from(status == "Vulnerable");
    }
    out
}

fn similarity_to_parent(io: &mut StageIo<'_>, stage: Stage, parent: &str) -> Result<BTreeMap<String, f64>, PipelineError> {
    let text = io.read_string(SIMILARITY_SUMMARY)?;
    let s: SimilaritySummary = serde_json::from_str(&text).map_err(|e| failed(stage, SIMILARITY_SUMMARY, e))?;
    Ok(s.results
        .into_iter()
        .filter(|r| r.repo_b == parent)
        .map(|r| (r.repo_a, r.value))
        .collect())
}

fn write_table(io: &mut StageIo<'_>, name: &str, t: &CrossTab) -> Result<(), PipelineError> {
    io.write(&format!("crosstab/{name}.csv"), t.to_csv().as_bytes())?;
    io.write_json(&format!("crosstab/{name}.json"), t)
}

fn crosstab_stage(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let Some(reg_path) = cfg.registry_file.clone() else {
        return Err(PipelineError::ConfigInvalid {
            field: "registry_file".into(),
            message: "the crosstab stage needs a survivability registry".into(),
        });
    };
    let file = std::fs::File::open(&reg_path).map_err(|e| PipelineError::ConfigInvalid {
        field: "registry_file".into(),
        message: format!("{}: {e}", reg_path.display()),
    })?;
    let registry: Vec<SurvivabilityRecord> = parse_registry(file).map_err(|e| PipelineError::ConfigInvalid {
        field: "registry_file".into(),
        message: e.to_string(),
    })?;
    io.record_external("registry".into(), file_digest(&reg_path).unwrap_or_default());
    let c = Stage::Crosstab;

    let assign = read_assignments(io, c)?;
    let by_cluster: BTreeMap<String, String> = assign
        .iter()
        .map(|(r, k)| (r.clone(), format!("cluster{k}")))
        .collect();
    let t = crosstab("cluster", &by_cluster, &registry).map_err(|e| failed(c, "by_cluster", e))?;
    write_table(io, "by_cluster", &t)?;

    if let Some(parent) = &cfg.parent_repo_id {
        let sims = similarity_to_parent(io, c, parent)?;
        let mut buckets = Vec::new();
        for &t in &cfg.crosstab.similarity_buckets {
            buckets.push(Bucket::AtLeast(t));
        }
        if let Some(lo) = cfg.crosstab.similarity_buckets.iter().copied().reduce(f64::min) {
            buckets.push(Bucket::Below(lo));
        }
        let t = crosstab_buckets("similarity", &sims, &buckets, &registry).map_err(|e| failed(c, "by_similarity", e))?;
        write_table(io, "by_similarity", &t)?;
    }

    if cfg.vulnscan.signature_file.is_some() {
        let findings = read_findings(io, c)?;
        let groups: BTreeMap<String, String> = unpatched_counts(&findings)
            .into_iter()
            .map(|(r, n)| (r, if n > 0 { "unpatched".to_string() } else { "clean".to_string() }))
            .collect();
        let t = crosstab("vulnerability", &groups, &registry).map_err(|e| failed(c, "by_vulnerability", e))?;
        write_table(io, "by_vulnerability", &t)?;
    }
    Ok(Vec::new())
}

/// A statistic or the reason it could not be computed on this corpus.
fn outcome<T: Serialize, E: std::fmt::Display>(r: Result<T, E>) -> serde_json::Value {
    match r {
        Ok(v) => json!({ "result": v }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    }
}

fn stats(cfg: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<Skip>, PipelineError> {
    let s = Stage::Stats;
    let assign = read_assignments(io, s)?;
    let mut report = serde_json::Map::new();

    let feats = read_features(io, s)?;
    let commits_idx = FEATURE_NAMES.iter().position(|n| *n == "commits").unwrap_or(0);
    let k = assign.values().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (id, v) in &feats {
        if let Some(&c) = assign.get(id) {
            groups[c].push(v[commits_idx]);
        }
    }
    report.insert("commits_by_cluster_kruskal_wallis".into(), outcome(kruskal_wallis(&groups)));

    let findings = if cfg.vulnscan.signature_file.is_some() {
        Some(read_findings(io, s)?)
    } else {
        None
    };
    if let Some(f) = &findings {
        let days: Vec<f64> = f
            .iter()
            .filter(|(_, _, st, _)| st == "Patched")
            .filter_map(|x| x.3)
            .collect();
        report.insert("time_to_patch_days".into(), outcome(summary_stats(&days)));
    }
    if let (Some(parent), Some(f)) = (&cfg.parent_repo_id, &findings) {
        let sims = similarity_to_parent(io, s, parent)?;
        let unpatched = unpatched_counts(f);
        let (x, y): (Vec<f64>, Vec<f64>) = sims
            .iter()
            .filter_map(|(r, v)| unpatched.get(r).map(|n| (*v, *n as f64)))
            .unzip();
        report.insert("similarity_vs_unpatched_pearson".into(), outcome(pearson(&x, &y)));
    }
    io.write_json("stats/stats.json", &report)?;
    Ok(Vec::new())
}
