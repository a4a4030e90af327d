use std::collections::BTreeMap;

use forklens_core::analytics::{
    crosstab, kruskal_wallis, pearson, AnalyticsError, SurvivabilityRecord,
};
use proptest::prelude::*;

fn spread(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pearson_ignores_positive_affine_maps(
        pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        a in 0.01f64..100.0,
        b in -1e3f64..1e3,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        prop_assume!(spread(&x) > 1e-3 && spread(&y) > 1e-3);
        let base = pearson(&x, &y).unwrap();
        let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let yt: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&xt, &y).unwrap().r - base.r).abs() <= 1e-9);
        prop_assert!((pearson(&x, &yt).unwrap().r - base.r).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&base.r));
        prop_assert!((0.0..=1.0).contains(&base.p));
    }

    #[test]
    fn kruskal_wallis_depends_only_on_order(
        groups in prop::collection::vec(prop::collection::vec(-20i32..20, 1..8), 2..5),
        transform in 0usize..3,
    ) {
        let as_f: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|&v| v as f64).collect()).collect();
        let f = |v: f64| match transform {
            0 => (v / 7.0).exp(),
            1 => v * v * v,
            _ => 3.0 * v - 11.0,
        };
        let mapped: Vec<Vec<f64>> = as_f.iter().map(|g| g.iter().map(|&v| f(v)).collect()).collect();
        match (kruskal_wallis(&as_f), kruskal_wallis(&mapped)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.h - y.h).abs() < 1e-9);
                prop_assert!(x.h >= 0.0);
                prop_assert_eq!(x.dof, groups.len() - 1);
            }
            (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
            other => prop_assert!(false, "diverging outcomes {:?}", other),
        }
    }

    #[test]
    fn crosstab_rows_add_up(
        repos in prop::collection::btree_map("[a-z]{1,6}", (0u8..4, any::<[bool; 4]>(), any::<bool>()), 1..40),
    ) {
        let groups: BTreeMap<String, String> = repos.iter().map(|(r, (g, _, _))| (r.clone(), format!("g{g}"))).collect();
        let registry: Vec<SurvivabilityRecord> = repos
            .iter()
            .filter(|(_, (_, _, listed))| *listed)
            .map(|(r, (_, f, _))| SurvivabilityRecord {
                repo_id: r.clone(),
                delisted_market: f[0],
                repo_unavailable: f[1],
                scam_list_a: f[2],
                scam_list_b: f[3],
            })
            .collect();
        let t = crosstab("group", &groups, &registry).unwrap();
        let (all, rest) = t.rows.split_last().unwrap();
        prop_assert_eq!(&all.group, "All");
        prop_assert_eq!(all.total, rest.iter().map(|r| r.total).sum::<usize>());
        for k in 0..5 {
            prop_assert_eq!(all.counts[k], rest.iter().map(|r| r.counts[k]).sum::<usize>());
        }
        for row in &t.rows {
            for k in 0..5 {
                prop_assert!(row.counts[k] <= row.total);
                prop_assert!((row.percent(k) - 100.0 * row.counts[k] as f64 / row.total as f64).abs() < 1e-12);
            }
            prop_assert!(row.counts[4] >= row.counts[..4].iter().copied().max().unwrap());
        }
        let csv = t.to_csv();
        prop_assert_eq!(csv.lines().count(), t.rows.len() + 1);
        for (line, row) in csv.lines().skip(1).zip(&t.rows) {
            let cells: Vec<&str> = line.split(',').collect();
            for k in 0..5 {
                prop_assert_eq!(cells[3 + 2 * k].to_string(), format!("{:.1}", row.percent(k)));
            }
        }
        let missing = repos.values().filter(|(_, _, l)| !l).count();
        prop_assert_eq!(t.missing.len(), missing);
    }
}

#[test]
fn duplicate_registry_rows_rejected() {
    let r = SurvivabilityRecord {
        repo_id: "x".into(),
        delisted_market: false,
        repo_unavailable: false,
        scam_list_a: false,
        scam_list_b: false,
    };
    let groups = BTreeMap::from([("x".to_string(), "g".to_string())]);
    assert_eq!(
        crosstab("g", &groups, &[r.clone(), r]).unwrap_err(),
        AnalyticsError::DuplicateRegistryEntry("x".into())
    );
}
