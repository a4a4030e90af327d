use std::collections::BTreeMap;

use forklens_core::ingest::{checkout_snapshot, history_from_fixture_str, history_to_fixture_string};
use forklens_core::synth::{vuln_fixture, HistoryBuilder, VulnFixtureShape};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Add(String),
    Edit(usize, usize, Vec<String>),
    Delete,
    Rename,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        "[a-z ]{0,12}(\n[a-z ]{0,12}){0,5}".prop_map(Op::Add),
        (any::<usize>(), 0usize..3, prop::collection::vec("[a-z;]{0,8}", 0..3))
            .prop_map(|(a, d, l)| Op::Edit(a, d, l)),
        Just(Op::Delete),
        Just(Op::Rename),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Replaying a random builder history reproduces the builder's own tree,
    /// and the fixture format round-trips field for field.
    #[test]
    fn replay_and_roundtrip(ops in prop::collection::vec((op(), any::<u8>()), 1..25)) {
        let mut b = HistoryBuilder::new("prop");
        b.add_file("seed.c", "x\ny\nz");
        b.commit("c0", 1_000, "a");
        let mut expected: Vec<BTreeMap<String, String>> = vec![snapshot_of(&b)];
        let mut counter = 0;
        for (i, (op, pick)) in ops.into_iter().enumerate() {
            let paths = b.paths();
            let path = paths.get(pick as usize % paths.len().max(1)).cloned();
            match (op, path) {
                (Op::Add(text), _) => {
                    counter += 1;
                    b.add_file(&format!("f{counter}.c"), &text);
                }
                (Op::Edit(at, del, lines), Some(p)) => {
                    let n = b.line_count(&p);
                    let at = at % (n + 1);
                    let del = del.min(n - at);
                    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
                    b.edit(&p, at, del, &refs);
                }
                (Op::Delete, Some(p)) if paths.len() > 1 => {
                    b.delete_file(&p);
                }
                (Op::Rename, Some(p)) => {
                    counter += 1;
                    b.rename(&p, &format!("r{counter}.c"));
                }
                _ => {}
            }
            b.commit(&format!("c{}", i + 1), 1_000 + i as i64 + 1, if i % 2 == 0 { "a" } else { "b" });
            expected.push(snapshot_of(&b));
        }
        let h = b.build();
        for (c, want) in h.commits().iter().zip(&expected) {
            let snap = checkout_snapshot(&h, &c.id).unwrap();
            let got: BTreeMap<String, String> = snap.iter().map(|(p, f)| (p.to_string(), f.lines.join("\n"))).collect();
            prop_assert_eq!(&got, want);
        }
        let text = history_to_fixture_string(&h);
        prop_assert_eq!(history_from_fixture_str(&text).unwrap(), h);
    }

    #[test]
    fn topological_order(seed in any::<u64>()) {
        let h = vuln_fixture(seed, VulnFixtureShape { commits: 12, files: 2, functions_per_file: 1, ..Default::default() });
        for (i, c) in h.commits().iter().enumerate() {
            for p in &c.parents {
                prop_assert!(h.position(p).is_some_and(|j| j < i));
            }
        }
    }
}

fn snapshot_of(b: &HistoryBuilder) -> BTreeMap<String, String> {
    b.paths().into_iter().map(|p| {
        let t = b.text(&p).unwrap();
        (p, t)
    }).collect()
}
