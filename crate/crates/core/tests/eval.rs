mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use szzkit::eval::{
    aggregate, collect_fixes_dataset, f1_score, load_dataset, rank_biserial, save_dataset,
    score_fix, signed_ranks, wilcoxon_exact_p, wilcoxon_signed_rank, wilcoxon_with, DatasetEntry,
    DatasetError, EvalError, WilcoxonMethod,
};
use szzkit::fixture::FixtureBuilder;
use szzkit::gitio::CommitId;

fn cid(n: u32) -> CommitId {
    CommitId::parse(&format!("{n:08x}").repeat(5)).unwrap()
}

fn set(xs: &[u32]) -> BTreeSet<CommitId> {
    xs.iter().map(|&x| cid(x)).collect()
}

#[test]
fn hand_scored_fixes() {
    let gt = set(&[1, 2]);
    let s = score_fix(&cid(9), &gt, &set(&[1, 3, 4])).unwrap();
    assert_eq!((s.precision, s.recall), (1.0 / 3.0, 0.5));
    let s = score_fix(&cid(9), &gt, &set(&[])).unwrap();
    assert_eq!((s.precision, s.recall), (0.0, 0.0));
    assert_eq!(score_fix(&cid(9), &set(&[]), &gt), Err(EvalError::EmptyGroundTruth));

    let rows = vec![
        score_fix(&cid(10), &set(&[1]), &set(&[1])).unwrap(),
        score_fix(&cid(11), &set(&[2]), &set(&[3])).unwrap(),
        score_fix(&cid(12), &set(&[4, 5]), &set(&[4])).unwrap(),
        score_fix(&cid(13), &set(&[6]), &set(&[])).unwrap(),
    ];
    let r = aggregate(&rows).unwrap();
    assert!((r.macro_precision - 0.5).abs() < 1e-12);
    assert!((r.macro_recall - 0.375).abs() < 1e-12);
    assert!((r.f1 - 2.0 * 0.5 * 0.375 / 0.875).abs() < 1e-12);
    assert_eq!(r.display_line(), "0.50 0.38 0.43");
    let j = r.to_json(None);
    assert_eq!(j["schema"], "report.v1");
    assert_eq!(j["display"]["recall"], "0.38");
    assert_eq!(aggregate(&[]), Err(EvalError::EmptyInput));
}

proptest! {
    #[test]
    fn score_matches_counting(gt in prop::collection::btree_set(0u32..12, 1..6),
                              pred in prop::collection::btree_set(0u32..12, 0..6)) {
        let g = set(&gt.iter().copied().collect::<Vec<_>>());
        let p = set(&pred.iter().copied().collect::<Vec<_>>());
        let s = score_fix(&cid(99), &g, &p).unwrap();
        let hits = pred.iter().filter(|x| gt.contains(x)).count() as f64;
        let want_p = if pred.is_empty() { 0.0 } else { hits / pred.len() as f64 };
        prop_assert_eq!(s.precision, want_p);
        prop_assert_eq!(s.recall, hits / gt.len() as f64);
        prop_assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall));
    }

    #[test]
    fn f1_bounded_by_inputs(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        let f = f1_score(p, r);
        prop_assert!(f <= p.max(r) + 1e-12 && f >= 0.0);
        if p > 0.0 && r > 0.0 {
            prop_assert!(f >= p.min(r) - 1e-12);
        }
    }

    #[test]
    fn exact_p_matches_enumeration(d in prop::collection::vec(-4i32..=4, 1..11)) {
        let a: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        let b = vec![0.0; a.len()];
        match signed_ranks(&a, &b) {
            Err(e) => prop_assert_eq!(e, EvalError::AllZeroDifferences),
            Ok(sr) => {
                let (ranks, wp) = common::brute_ranks(&a);
                let mut got = sr.ranks.clone();
                let mut want = ranks.clone();
                got.sort_by(f64::total_cmp);
                want.sort_by(f64::total_cmp);
                prop_assert_eq!(got, want);
                prop_assert_eq!(sr.w_plus(), wp);
                let p = wilcoxon_exact_p(&sr);
                prop_assert!((p - common::brute_wilcoxon_p(&ranks, wp)).abs() < 1e-12);
                prop_assert!(p > 0.0 && p <= 1.0);
            }
        }
    }

    #[test]
    fn rank_biserial_antisymmetric(d in prop::collection::vec(-3i32..=3, 1..15)) {
        let a: Vec<f64> = d.iter().map(|&x| x as f64).collect();
        let b = vec![0.0; a.len()];
        if let Ok(r) = rank_biserial(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((rank_biserial(&b, &a).unwrap() + r).abs() < 1e-12);
        }
    }
}

#[test]
fn wilcoxon_reference_values() {
    let r = wilcoxon_signed_rank(&[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
    assert_eq!((r.statistic_w, r.p_value, r.effect_r), (6.0, 0.25, 1.0));
    assert_eq!(r.method, WilcoxonMethod::Exact);
    // every difference positive: p = 2 / 2^n
    for n in 1..=10usize {
        let a: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&a, &vec![0.0; n]).unwrap();
        assert!((r.p_value - (2.0 / 2f64.powi(n as i32)).min(1.0)).abs() < 1e-12);
        let r = wilcoxon_signed_rank(&vec![0.0; n], &a).unwrap();
        assert_eq!(r.effect_r, -1.0);
    }
    // float noise in differences still ties
    let r = wilcoxon_signed_rank(&[0.3, 0.1], &[0.2, 0.0]).unwrap();
    assert_eq!(r.statistic_w, 3.0);
    assert_eq!(
        wilcoxon_signed_rank(&[0.5, 0.5], &[0.5, 0.5]),
        Err(EvalError::AllZeroDifferences)
    );
    assert_eq!(wilcoxon_signed_rank(&[1.0], &[]), Err(EvalError::LengthMismatch(1, 0)));
}

#[test]
fn normal_approximation_above_twenty() {
    let a: Vec<f64> = (0..30).map(|i| (i % 7) as f64 - 2.0).collect();
    let b = vec![0.0; 30];
    let r = wilcoxon_signed_rank(&a, &b).unwrap();
    assert_eq!(r.method, WilcoxonMethod::Normal);
    assert!(r.n_effective > 20);
    // close to the exact value for the same data
    let exact = wilcoxon_with(&a, &b, WilcoxonMethod::Exact).unwrap();
    assert!((r.p_value - exact.p_value).abs() < 0.02, "{} vs {}", r.p_value, exact.p_value);
}

#[test]
fn dataset_round_trip_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.jsonl");
    let entries = vec![
        DatasetEntry {
            repo_id: "r".into(),
            fix: cid(1),
            gt_bics: set(&[2, 3]),
            collected_at: None,
        },
        DatasetEntry {
            repo_id: "r".into(),
            fix: cid(4),
            gt_bics: set(&[2]),
            collected_at: Some("2024-01-01".into()),
        },
    ];
    save_dataset(&entries, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), entries);

    let bad = |text: &str, line: usize| {
        std::fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(DatasetError::SchemaViolation { line: l, .. }) => assert_eq!(l, line, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    };
    let ok = format!(r#"{{"repo_id":"r","fix":"{}","gt_bics":["{}"]}}"#, cid(1), cid(2));
    bad(&format!("{ok}\n{ok}\n"), 2);
    bad(&format!(r#"{{"repo_id":"r","fix":"{}","gt_bics":[]}}"#, cid(1)), 1);
    bad(&format!(r#"{{"repo_id":"r","fix":"{}","gt_bics":["{}"]}}"#, cid(1), cid(1)), 1);
    bad(&format!(r#"{{"repo_id":"r","fix":"xyz","gt_bics":["{}"]}}"#, cid(1)), 1);
    bad(&format!("\n{}", ok.replace("\"r\"", "\"r\",\"extra\":1")), 2);
    bad(&ok.replace("{", r#"{"schema":"dataset.v0","#), 1);
    std::fs::write(&path, ok.replace("{", r#"{"schema":"dataset.v1","#)).unwrap();
    assert_eq!(load_dataset(&path).unwrap().len(), 1);
    assert!(matches!(load_dataset(&dir.path().join("missing")), Err(DatasetError::Io(..))));
}

#[test]
fn collector_resolves_and_skips() {
    let mut b = FixtureBuilder::new();
    b.commit("a", 1000, &[("f", Some("1\n"))]);
    b.commit("b", 2000, &[("f", Some("2\n"))]);
    let ids = b.preview_ids().unwrap();
    b.commit(
        &format!(
            "fix a\n\nFixes: {} (\"a\")\nFixes: {}\nFixes: deadbeefcafe (\"gone\")\nFixes: abc12\n",
            ids[0],
            ids[1].short(12).to_uppercase()
        ),
        3000,
        &[("f", Some("3\n"))],
    );
    b.commit("plain", 4000, &[("f", Some("4\n"))]);
    b.commit(&format!("late\n\nFixes: {}\n", ids[0].short(7)), 9000, &[("f", Some("5\n"))]);
    let fx = b.build().unwrap();
    let repo = fx.repo();
    let tip = fx.id(4);

    let (rep, warns) = common::with_warnings(|| collect_fixes_dataset(&repo, tip, 0, 5000, "demo").unwrap());
    assert_eq!(rep.commits_scanned, 4);
    assert_eq!(rep.entries.len(), 1);
    assert_eq!(rep.entries[0].fix, *fx.id(2));
    assert_eq!(rep.entries[0].gt_bics, common::ids_of(&fx, [0, 1]));
    assert_eq!(rep.tags_resolved, 2);
    let tokens: Vec<&str> = rep.skipped.iter().map(|s| s.token.as_str()).collect();
    assert_eq!(tokens, vec!["deadbeefcafe", "abc12"]);
    assert_eq!(warns.len(), 2);
    assert!(warns[0].contains("deadbeefcafe") && warns[1].contains("abc12"));

    let (all, _) = common::with_warnings(|| collect_fixes_dataset(&repo, tip, 0, i64::MAX, "demo").unwrap());
    let fixes: Vec<&CommitId> = all.entries.iter().map(|e| &e.fix).collect();
    assert_eq!(fixes, vec![fx.id(2), fx.id(4)]);
    for e in &all.entries {
        e.validate().unwrap();
    }
}
