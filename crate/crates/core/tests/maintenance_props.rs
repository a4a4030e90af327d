use std::collections::BTreeSet;

use forklens_core::ingest::HostingMetadata;
use forklens_core::maintenance::{
    best_first_attributes, compute_mde, extract_features, kmeans, silhouette, MONTH_SECS,
};
use forklens_core::synth::{vuln_fixture, VulnFixtureShape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, cols), rows)
}

fn meta(id: &str) -> HostingMetadata {
    HostingMetadata {
        repo_id: id.into(),
        watch: 3,
        star: 10,
        fork_count: 2,
        issues_total: 5,
        issues_open: 1,
        issues_closed: 4,
        branches: 2,
        releases: 1,
        pull_requests: 7,
        fetched_at: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mde_bounds_and_saturation(periods in prop::collection::vec(prop::collection::btree_set(0u8..8, 0..8), 1..12)) {
        let union: BTreeSet<u8> = periods.iter().flatten().copied().collect();
        let counts: Vec<u64> = periods.iter().map(|s| s.len() as u64).collect();
        let m = compute_mde(&counts, union.len() as u64).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        let all_full = !union.is_empty() && periods.iter().all(|s| *s == union);
        prop_assert_eq!((m - 1.0).abs() < 1e-12, all_full);
    }

    #[test]
    fn kmeans_objective_never_rises(rows in matrix(24, 3), k in 2usize..5, seed in any::<u64>()) {
        let r = kmeans(&rows, k, seed).unwrap();
        for w in r.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", r.objective_trace);
        }
        let used: BTreeSet<usize> = r.assignments.iter().copied().collect();
        prop_assert_eq!(used.len(), k);
    }

    #[test]
    fn silhouette_bounded_and_averaged(rows in matrix(20, 2), k in 2usize..5, seed in any::<u64>()) {
        let r = kmeans(&rows, k, seed).unwrap();
        let (overall, per) = silhouette(&rows, &r.assignments, k);
        let m = per.iter().map(|p| p.s).sum::<f64>() / per.len() as f64;
        prop_assert!((overall - m).abs() < 1e-12);
        prop_assert!((overall - r.silhouette).abs() < 1e-12);
        for p in &per {
            prop_assert!((-1.0..=1.0).contains(&p.s));
        }
    }

    #[test]
    fn feature_vector_has_32_entries(seed in any::<u64>(), months in 0i64..30) {
        let h = vuln_fixture(seed, VulnFixtureShape { commits: 15, files: 2, functions_per_file: 1, ..Default::default() });
        let as_of = h.head().author_time + months * MONTH_SECS;
        let f = extract_features(&h, &meta(h.repo_id()), as_of).unwrap();
        let v = f.to_array();
        prop_assert_eq!(v.len(), 32);
        prop_assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        for m in [f.mde.mde_3m, f.mde.mde_6m, f.mde.mde_12m] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn attribute_search_ignores_column_order(
        rows in matrix(30, 6),
        labels in prop::collection::vec(0usize..3, 30),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let names: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
        let base = best_first_attributes(&rows, &labels, &names, 5).unwrap();
        let shuffled_rows: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&c| r[c]).collect()).collect();
        let shuffled_names: Vec<String> = perm.iter().map(|&c| names[c].clone()).collect();
        let other = best_first_attributes(&shuffled_rows, &labels, &shuffled_names, 5).unwrap();
        prop_assert_eq!(&base.selected, &other.selected);
        prop_assert_eq!(base.merit, other.merit);
        let distinct: BTreeSet<&String> = base.selected.iter().collect();
        prop_assert_eq!(distinct.len(), base.selected.len());
    }
}
