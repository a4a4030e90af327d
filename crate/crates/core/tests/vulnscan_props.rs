use forklens_core::ingest::{checkout_snapshot, SnapshotTree};
use forklens_core::synth::{synthetic_signature, vuln_fixture, VulnFixtureShape, CORPUS_T0};
use forklens_core::vulnscan::{
    normalize_code, patch_stats_from_days, scan_history, scan_history_oracle, scan_latest, ScanConfig,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_scan_matches_oracle(seed in any::<u64>(), commits in 2usize..40, bulk in any::<bool>(), straddle in any::<bool>()) {
        let h = vuln_fixture(seed, VulnFixtureShape {
            commits, files: 3, functions_per_file: 2, force_bulk: bulk, force_straddle: straddle,
        });
        let sig = synthetic_signature("CVE-P", CORPUS_T0 + 86_400 * 3);
        let cfg = ScanConfig::default();
        let fast = scan_history(&h, &sig, &cfg).unwrap();
        let slow = scan_history_oracle(&h, &sig, &cfg).unwrap();
        prop_assert_eq!(&fast, &slow);
        for c in [&fast.introduced_commit, &fast.patched_commit].into_iter().flatten() {
            prop_assert!(h.contains(c));
        }
    }

    #[test]
    fn tiny_fallback_limit_changes_nothing(seed in any::<u64>()) {
        let h = vuln_fixture(seed, VulnFixtureShape { commits: 15, files: 2, functions_per_file: 2, ..Default::default() });
        let sig = synthetic_signature("CVE-P", CORPUS_T0);
        let a = scan_history(&h, &sig, &ScanConfig { fallback_file_limit: 0, ..Default::default() }).unwrap();
        let b = scan_history(&h, &sig, &ScanConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn latest_scan_ignores_reformatting(seed in any::<u64>(), indent in "[ \t]{0,4}") {
        let h = vuln_fixture(seed, VulnFixtureShape { commits: 10, files: 2, functions_per_file: 2, ..Default::default() });
        let snap = checkout_snapshot(&h, &h.head().id).unwrap();
        let reflowed = SnapshotTree::from_texts(snap.iter().map(|(p, c)| {
            let text: String = c.lines.iter().map(|l| format!("{indent}{}\n", l.replace(' ', "\n "))).collect();
            (p.to_string(), text)
        }));
        let sig = synthetic_signature("CVE-P", 0);
        prop_assert_eq!(scan_latest(&snap, &sig).matched, scan_latest(&reflowed, &sig).matched);
    }

    #[test]
    fn patch_stats_match_recomputation(days in prop::collection::vec(-100.0f64..1000.0, 1..40)) {
        let s = patch_stats_from_days(&days).unwrap();
        let mut sorted = days.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = sorted[(n - 1) / 2];
        let mean = days.iter().sum::<f64>() / n as f64;
        prop_assert!((s.median_days - median).abs() <= 1e-9);
        prop_assert!((s.mean_days - mean).abs() <= 1e-9);
    }

    #[test]
    fn normalize_strips_only_whitespace(text in "\\PC{0,80}") {
        let n = normalize_code(&text);
        prop_assert!(!n.chars().any(char::is_whitespace));
        prop_assert_eq!(n, text.split_whitespace().collect::<String>());
    }
}
