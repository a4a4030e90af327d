//! Survivability cross-tabulation and the statistics used in the reports.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use thiserror::Error;
use tracing::warn;

use crate::stats::{lower_median, mean, population_std};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("repository {0} appears more than once in the registry")]
    DuplicateRegistryEntry(String),
    #[error("registry line {line}: {message}")]
    MalformedRegistry { line: u64, message: String },
    #[error("x has {x} values but y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("no values")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivabilityRecord {
    pub repo_id: String,
    pub delisted_market: bool,
    pub repo_unavailable: bool,
    pub scam_list_a: bool,
    pub scam_list_b: bool,
}

impl SurvivabilityRecord {
    pub fn inactive_any(&self) -> bool {
        self.delisted_market || self.repo_unavailable || self.scam_list_a || self.scam_list_b
    }

    fn flags(&self) -> [bool; 5] {
        [
            self.delisted_market,
            self.repo_unavailable,
            self.scam_list_a,
            self.scam_list_b,
            self.inactive_any(),
        ]
    }
}

pub const FLAG_NAMES: [&str; 5] = [
    "delisted_market",
    "repo_unavailable",
    "scam_list_a",
    "scam_list_b",
    "inactive_any",
];

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Reads `repo_id,delisted_market,repo_unavailable,scam_list_a,scam_list_b`
/// with a header row and `true`/`false` cells.
pub fn parse_registry(reader: impl Read) -> Result<Vec<SurvivabilityRecord>, AnalyticsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AnalyticsError::MalformedRegistry {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| AnalyticsError::MalformedRegistry { line, message };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", rec.len())));
        }
        let mut flags = [false; 4];
        for (k, f) in flags.iter_mut().enumerate() {
            *f = parse_flag(&rec[k + 1])
                .ok_or_else(|| bad(format!("{} must be true or false", FLAG_NAMES[k])))?;
        }
        let repo_id = rec[0].to_string();
        if repo_id.is_empty() {
            return Err(bad("empty repo_id".into()));
        }
        if seen.insert(repo_id.clone(), ()).is_some() {
            return Err(AnalyticsError::DuplicateRegistryEntry(repo_id));
        }
        out.push(SurvivabilityRecord {
            repo_id,
            delisted_market: flags[0],
            repo_unavailable: flags[1],
            scam_list_a: flags[2],
            scam_list_b: flags[3],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTabRow {
    pub group: String,
    pub total: usize,
    /// Counts in [`FLAG_NAMES`] order.
    pub counts: [usize; 5],
}

impl CrossTabRow {
    /// Percentage of the row total, 0 for an empty row.
    pub fn percent(&self, flag: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.counts[flag] as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub group_key: String,
    pub rows: Vec<CrossTabRow>,
    /// Repositories absent from the registry, counted as all-false.
    pub missing: Vec<String>,
}

impl CrossTab {
    /// CSV with one count and one percentage column per flag.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},total", self.group_key);
        for f in FLAG_NAMES {
            out.push_str(&format!(",{f},{f}_pct"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.group, r.total));
            for k in 0..5 {
                out.push_str(&format!(",{},{:.1}", r.counts[k], r.percent(k)));
            }
            out.push('\n');
        }
        out
    }
}

fn index_registry(
    registry: &[SurvivabilityRecord],
) -> Result<HashMap<&str, &SurvivabilityRecord>, AnalyticsError> {
    let mut idx = HashMap::new();
    for r in registry {
        if idx.insert(r.repo_id.as_str(), r).is_some() {
            return Err(AnalyticsError::DuplicateRegistryEntry(r.repo_id.clone()));
        }
    }
    Ok(idx)
}

/// Cross-tabulates labelled rows of repositories. Rows may overlap; the
/// `All` row counts each distinct repository once.
pub fn crosstab_rows(
    group_key: &str,
    rows: &[(String, Vec<String>)],
    registry: &[SurvivabilityRecord],
) -> Result<CrossTab, AnalyticsError> {
    let idx = index_registry(registry)?;
    let mut missing = std::collections::BTreeSet::new();
    let mut tally = |label: &str, repos: &mut dyn Iterator<Item = &String>| {
        let mut row = CrossTabRow {
            group: label.to_string(),
            total: 0,
            counts: [0; 5],
        };
        for repo in repos {
            row.total += 1;
            match idx.get(repo.as_str()) {
                Some(rec) => {
                    for (k, on) in rec.flags().into_iter().enumerate() {
                        row.counts[k] += usize::from(on);
                    }
                }
                None => {
                    missing.insert(repo.clone());
                }
            }
        }
        row
    };
    let mut out: Vec<CrossTabRow> = rows
        .iter()
        .map(|(label, repos)| tally(label, &mut repos.iter()))
        .collect();
    let distinct: std::collections::BTreeSet<&String> = rows.iter().flat_map(|(_, r)| r).collect();
    out.push(tally("All", &mut distinct.into_iter()));
    for m in &missing {
        warn!(repo = %m, "not in survivability registry; counted as active");
    }
    Ok(CrossTab {
        group_key: group_key.to_string(),
        rows: out,
        missing: missing.into_iter().collect(),
    })
}

/// One row per distinct group label, in label order, plus `All`.
pub fn crosstab(
    group_key: &str,
    groups: &BTreeMap<String, String>,
    registry: &[SurvivabilityRecord],
) -> Result<CrossTab, AnalyticsError> {
    let mut by_label: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (repo, label) in groups {
        by_label.entry(label).or_default().push(repo.clone());
    }
    let rows: Vec<(String, Vec<String>)> = by_label
        .into_iter()
        .map(|(l, r)| (l.to_string(), r))
        .collect();
    crosstab_rows(group_key, &rows, registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bucket {
    AtLeast(f64),
    Below(f64),
}

impl Bucket {
    pub fn label(&self) -> String {
        match self {
            Bucket::AtLeast(t) => format!(">={t}"),
            Bucket::Below(t) => format!("<{t}"),
        }
    }

    fn contains(&self, v: f64) -> bool {
        match *self {
            Bucket::AtLeast(t) => v >= t,
            Bucket::Below(t) => v < t,
        }
    }
}

/// Threshold rows over a numeric value per repository; a repository can land
/// in several rows (e.g. both `>=0.90` and `>=0.95`).
pub fn crosstab_buckets(
    group_key: &str,
    values: &BTreeMap<String, f64>,
    buckets: &[Bucket],
    registry: &[SurvivabilityRecord],
) -> Result<CrossTab, AnalyticsError> {
    let rows: Vec<(String, Vec<String>)> = buckets
        .iter()
        .map(|b| {
            let members = values
                .iter()
                .filter(|(_, v)| b.contains(**v))
                .map(|(r, _)| r.clone())
                .collect();
            (b.label(), members)
        })
        .collect();
    crosstab_rows(group_key, &rows, registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

fn check_finite(v: &[f64]) -> Result<(), AnalyticsError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AnalyticsError::NonFinite)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 3 {
        return Err(AnalyticsError::TooFewObservations { needed: 3, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = (x.len() - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p, n: x.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub dof: usize,
}

/// Mid-ranks (1-based) of `values`.
fn mid_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_sum)
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, AnalyticsError> {
    if groups.len() < 2 {
        return Err(AnalyticsError::TooFewGroups(groups.len()));
    }
    if let Some(k) = groups.iter().position(Vec::is_empty) {
        return Err(AnalyticsError::EmptyGroup(k));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    check_finite(&all)?;
    let n = all.len();
    if n < 3 {
        return Err(AnalyticsError::TooFewObservations { needed: 3, got: n });
    }
    let dof = groups.len() - 1;
    let (ranks, tie_sum) = mid_ranks(&all);
    let nf = n as f64;
    let correction = 1.0 - tie_sum / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p: 1.0, dof });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (nf * (nf + 1.0)) * sum - 3.0 * (nf + 1.0)) / correction;
    let h = h.max(0.0);
    let p = ChiSquared::new(dof as f64).expect("positive dof").sf(h);
    Ok(KruskalWallis { h, p, dof })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn summary_stats(values: &[f64]) -> Result<Summary, AnalyticsError> {
    check_finite(values)?;
    let median = lower_median(values).ok_or(AnalyticsError::EmptyInput)?;
    Ok(Summary {
        median,
        mean: mean(values),
        std: population_std(values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, flags: [bool; 4]) -> SurvivabilityRecord {
        SurvivabilityRecord {
            repo_id: id.into(),
            delisted_market: flags[0],
            repo_unavailable: flags[1],
            scam_list_a: flags[2],
            scam_list_b: flags[3],
        }
    }

    #[test]
    fn group_of_four() {
        let reg = vec![
            rec("a", [true, false, false, false]),
            rec("b", [false, true, false, false]),
            rec("c", [false, false, false, true]),
            rec("d", [false; 4]),
        ];
        let groups: BTreeMap<String, String> =
            ["a", "b", "c", "d"].iter().map(|r| (r.to_string(), "G".to_string())).collect();
        let t = crosstab("cluster", &groups, &reg).unwrap();
        assert_eq!(t.rows[0].total, 4);
        assert_eq!(t.rows[0].percent(4), 75.0);
        assert!(t.to_csv().contains("G,4,1,25.0,1,25.0,0,0.0,1,25.0,3,75.0"));
    }

    #[test]
    fn empty_groups_and_missing() {
        let t = crosstab("cluster", &BTreeMap::new(), &[]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!((t.rows[0].group.as_str(), t.rows[0].total), ("All", 0));
        let groups = BTreeMap::from([("zz".to_string(), "1".to_string())]);
        let t = crosstab("cluster", &groups, &[]).unwrap();
        assert_eq!(t.missing, vec!["zz"]);
        let dup = vec![rec("a", [false; 4]), rec("a", [true; 4])];
        assert_eq!(
            crosstab("c", &groups, &dup),
            Err(AnalyticsError::DuplicateRegistryEntry("a".into()))
        );
    }

    #[test]
    fn registry_csv() {
        let text = "repo_id,delisted_market,repo_unavailable,scam_list_a,scam_list_b\nx,true,false,FALSE,false\n";
        let r = parse_registry(text.as_bytes()).unwrap();
        assert!(r[0].inactive_any());
        let bad = "repo_id,delisted_market,repo_unavailable,scam_list_a,scam_list_b\nx,yes,false,false,false\n";
        assert!(matches!(parse_registry(bad.as_bytes()), Err(AnalyticsError::MalformedRegistry { line: 2, .. })));
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((pearson(&x, &y).unwrap().r - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-12);
        let c = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        assert!((c.p - 0.104).abs() < 5e-4);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalyticsError::ZeroVariance));
        assert!(matches!(pearson(&[1.0], &[1.0, 2.0]), Err(AnalyticsError::LengthMismatch { .. })));
    }

    #[test]
    fn kruskal_examples() {
        let k = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((k.h - 27.0 / 7.0).abs() < 1e-12);
        assert_eq!(k.dof, 1);
        let tied = kruskal_wallis(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!((tied.h, tied.p), (0.0, 1.0));
        assert_eq!(kruskal_wallis(&[vec![1.0]]), Err(AnalyticsError::TooFewGroups(1)));
        assert_eq!(kruskal_wallis(&[vec![1.0], vec![]]), Err(AnalyticsError::EmptyGroup(1)));
    }

    #[test]
    fn summaries() {
        let s = summary_stats(&[16.0, 16.0, 700.0]).unwrap();
        assert_eq!((s.median, s.mean), (16.0, 244.0));
        assert_eq!(summary_stats(&[5.0]).unwrap(), Summary { median: 5.0, mean: 5.0, std: 0.0 });
        assert_eq!(summary_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap().median, 2.0);
        assert_eq!(summary_stats(&[]), Err(AnalyticsError::EmptyInput));
    }
}
