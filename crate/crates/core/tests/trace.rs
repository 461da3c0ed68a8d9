mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rust_decimal::Decimal;
use serde_json::json;
use szzkit::agent::{ModelPrice, PriceTable, ToolKind, UsageLedger};
use szzkit::candidates::{RedactionSpec, PLACEHOLDER};
use szzkit::fixture::{Fixture, FixtureBuilder};
use szzkit::trace::{
    analyse, classify_grep_sources, classify_pattern, pattern_stats, pearson,
    provenance_histogram, read_materials_dir, tool_distribution, usage_report, AnalysisError,
    FixMaterials, GrepSource,
};

use GrepSource::*;

fn grep(p: &str) -> (ToolKind, serde_json::Value) {
    (ToolKind::Grep, json!({"pattern": p}))
}

fn grep_lit(p: &str) -> (ToolKind, serde_json::Value) {
    (ToolKind::Grep, json!({"pattern": p, "mode": "literal"}))
}

fn labels(xs: &[GrepSource]) -> BTreeSet<GrepSource> {
    xs.iter().copied().collect()
}

fn materials(fx: &Fixture) -> FixMaterials {
    FixMaterials::load_from_repo(&fx.repo(), fx.id(1), 3, &RedactionSpec::none()).unwrap()
}

#[test]
fn sleep_pattern_from_message_and_removed_lines() {
    let m = materials(&common::sleep_fixture());
    assert!(m.removed_lines.iter().any(|l| l.contains("fsleep")));
    let t = common::trace_with("s", m.fix.clone(), &[grep("fsleep"), grep(r"fsleep\("), grep_lit("fsleep(10)")]);
    let got = classify_grep_sources(&t, &m);
    assert!(got[0].labels.is_superset(&labels(&[Message, RemovedLines])));
    assert!(!got[0].labels.contains(&AddedLines));
    assert_eq!(got[1].normalized, "fsleep(");
    assert!(got[1].literal);
    assert_eq!(got[1].labels, labels(&[RemovedLines]));
    assert_eq!(got[2].labels, labels(&[RemovedLines]));
}

#[test]
fn shift_pattern_only_in_removed_lines() {
    let m = materials(&common::shift_fixture());
    let t = common::trace_with("s", m.fix.clone(), &[grep("blk->size >> 2"), grep("blk->size")]);
    let got = classify_grep_sources(&t, &m);
    assert_eq!(got[0].labels, labels(&[RemovedLines]));
    assert!(got[0].literal);
    assert_eq!(got[1].labels, labels(&[RemovedLines, AddedLines]));
}

#[test]
fn function_pattern_from_message_and_header() {
    let m = materials(&common::smc_fixture());
    assert!(m.function_names.contains(&"smc_ib_is_sg_need_sync".to_string()));
    let t = common::trace_with("s", m.fix.clone(), &[grep("smc_ib_is_sg_need_sync")]);
    let got = classify_grep_sources(&t, &m)[0].labels.clone();
    assert!(got.is_superset(&labels(&[Message, FunctionNames, HunkHeaders])), "{got:?}");
    assert!(!got.contains(&RemovedLines) && !got.contains(&AddedLines));
}

#[test]
fn paths_hashes_raw_and_undetermined() {
    let m = materials(&common::smc_fixture());
    assert_eq!(m.path_components, vec!["net", "smc", "smc_ib.c"]);
    let cases = [
        ("smc_ib.c", labels(&[FilePaths, PathComponents])),
        ("smc/smc_ib", labels(&[FilePaths])),
        ("xqzzy_nowhere", labels(&[Undetermined])),
        ("deadbeef12", labels(&[CommitHashPattern])),
        (PLACEHOLDER, labels(&[CommitHashPattern])),
        // spans two diff lines
        ("break;\n-\t\tif", labels(&[RawMatch])),
        ("+++ b/net", labels(&[RawMatch])),
        ("", labels(&[Undetermined])),
    ];
    for (p, want) in cases {
        assert_eq!(classify_pattern(p, &m), want, "{p:?}");
    }
}

#[test]
fn materials_json_and_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut want = BTreeMap::new();
    for fx in [common::sleep_fixture(), common::shift_fixture()] {
        let m = materials(&fx);
        let text = m.to_json();
        assert_eq!(FixMaterials::from_json(&text).unwrap(), m);
        std::fs::write(FixMaterials::path_in(dir.path(), fx.id(1)), text).unwrap();
        want.insert(fx.id(1).clone(), m);
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    assert_eq!(read_materials_dir(dir.path()).unwrap(), want);
    assert!(FixMaterials::from_json(r#"{"schema":"materials.v0"}"#).is_err());
}

#[test]
fn materials_are_redacted() {
    let mut b = FixtureBuilder::new();
    b.commit("bug", 1000, &[("a.c", Some("x = 1;\n"))]);
    let gt = b.preview_ids().unwrap()[0].clone();
    b.commit(&format!("fix\n\nBroken since {}.\nFixes: {}\n", gt.short(10), gt.short(12)), 2000, &[("a.c", Some("x = 2;\n"))]);
    let fx = b.build().unwrap();
    let spec = RedactionSpec::new([gt.clone()]);
    let m = FixMaterials::load_from_repo(&fx.repo(), fx.id(1), 3, &spec).unwrap();
    assert!(common::leaked_prefixes(&m.to_json(), &BTreeSet::from([gt])).is_empty());
    assert!(m.message.contains(PLACEHOLDER));
}

#[test]
fn tool_distribution_examples() {
    use ToolKind::*;
    let t = common::trace_with("a", None, &[(Read, json!({})), (Read, json!({})), grep("x")]);
    let d = tool_distribution(&[t]).unwrap();
    assert_eq!(d, BTreeMap::from([(Read, 2.0), (Grep, 1.0), (Glob, 0.0), (Write, 0.0)]));
    let fx = common::basic();
    let one = common::trace_with("a", Some(fx.id(1).clone()), &[(Read, json!({}))]);
    let three = common::trace_with("b", Some(fx.id(2).clone()), &[(Read, json!({})), (Read, json!({})), (Read, json!({}))]);
    assert_eq!(tool_distribution(&[one, three]).unwrap()[&Read], 2.0);
    assert_eq!(tool_distribution(&[]), Err(AnalysisError::EmptyInput));
}

#[test]
fn pattern_stats_examples() {
    let pats = ["abcdef".to_string(), "x".repeat(21), "y".repeat(104)];
    let t = common::trace_with("a", None, &pats.iter().map(|p| grep(p)).collect::<Vec<_>>());
    let s = pattern_stats(&[t]).unwrap();
    assert_eq!((s.median_len, s.min_len, s.max_len), (21.0, 6, 104));
    let t = common::trace_with("a", None, &[grep("abc"), grep("a.*b")]);
    assert_eq!(pattern_stats(&[t]).unwrap().literal_fraction, 0.5);
    let t = common::trace_with("a", None, &[(ToolKind::Read, json!({}))]);
    assert_eq!(pattern_stats(&[t]), Err(AnalysisError::NoGrepCalls));
}

fn sorted_oracle(lens: &[usize]) -> (f64, f64, f64) {
    let mut v = lens.to_vec();
    v.sort();
    let n = v.len();
    let median = if n % 2 == 0 { (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0 } else { v[n / 2] as f64 };
    let mean = v.iter().sum::<usize>() as f64 / n as f64;
    let var = v.iter().map(|&x| (x as f64 - mean) * (x as f64 - mean)).sum::<f64>() / n as f64;
    (median, mean, var.sqrt())
}

proptest! {
    #[test]
    fn pattern_stats_match_oracle(pats in prop::collection::vec("[a-z.*()]{1,30}", 1..40), split in 0usize..40) {
        let calls: Vec<_> = pats.iter().map(|p| grep(p)).collect();
        let k = split.min(calls.len());
        let traces = [common::trace_with("a", None, &calls[..k]), common::trace_with("b", None, &calls[k..])];
        let s = pattern_stats(&traces).unwrap();
        let lens: Vec<usize> = pats.iter().map(|p| p.chars().count()).collect();
        let (median, mean, std) = sorted_oracle(&lens);
        prop_assert_eq!(s.median_len, median);
        prop_assert_eq!(s.mean_len, mean);
        prop_assert_eq!(s.std_len, std);
        prop_assert_eq!(s.count, pats.len());
        let lits = pats.iter().filter(|p| !p.contains(['.', '*', '(', ')'])).count();
        prop_assert_eq!(s.literal_fraction, lits as f64 / pats.len() as f64);
    }

    #[test]
    fn labels_stable_under_reordering(idx in prop::collection::vec(0usize..8, 1..10), seed in any::<u64>()) {
        let m = materials(&common::sleep_fixture());
        let pool = ["fsleep", "foo", r"usleep_range\(", "hwmon", "drivers", "zz", "a.*b", "ret"];
        let calls: Vec<_> = idx.iter().map(|&i| grep(pool[i])).collect();
        let mut shuffled = calls.clone();
        let mut rng = StdRng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let by_pattern = |cs: &[(ToolKind, serde_json::Value)]| {
            let t = common::trace_with("s", None, cs);
            classify_grep_sources(&t, &m)
                .into_iter()
                .map(|p| (p.pattern, p.labels))
                .collect::<BTreeMap<_, _>>()
        };
        prop_assert_eq!(by_pattern(&calls), by_pattern(&shuffled));
        for p in classify_grep_sources(&common::trace_with("s", None, &calls), &m) {
            prop_assert!(!p.labels.is_empty());
            prop_assert!(!p.labels.contains(&Undetermined) || p.labels.len() == 1);
        }
    }
}

#[test]
fn histogram_can_exceed_hundred_percent() {
    let m = materials(&common::sleep_fixture());
    let t = common::trace_with("s", None, &[grep("fsleep"), grep("nothing_here")]);
    let h = provenance_histogram(&classify_grep_sources(&t, &m));
    assert_eq!(h[&Message], (1, 50.0));
    assert_eq!(h[&Undetermined], (1, 50.0));
    assert!(h.values().map(|v| v.1).sum::<f64>() > 100.0);
}

fn costed(session: &str, fix: &Fixture, i: usize, cands: usize, cost: &str) -> szzkit::agent::SessionTrace {
    let mut t = common::trace_with(session, Some(fix.id(i).clone()), &[]);
    t.candidate_count = Some(cands);
    t.model = "unpriced".into();
    t.result.usage = UsageLedger {
        input_tokens: 10,
        output_tokens: 5,
        cache_tokens: 0,
        cost_usd: Decimal::from_str(cost).unwrap(),
    };
    t
}

#[test]
fn usage_examples() {
    let fx = common::basic();
    let traces = [costed("a", &fx, 1, 4, "0.1"), costed("b", &fx, 2, 4, "0.3")];
    let r = usage_report(&traces, &PriceTable::default()).unwrap();
    assert_eq!(r.mean_cost_usd, Decimal::from_str("0.2").unwrap());
    assert_eq!(r.mean_tokens, 15.0);
    assert_eq!(r.correlation_candidates_vs_cost, None);
    assert_eq!(usage_report(&[], &PriceTable::default()), Err(AnalysisError::EmptyInput));

    // known models are re-priced from summed tokens
    let prices = PriceTable::default().with(
        "m",
        ModelPrice {
            input: Decimal::from(3),
            output: Decimal::from(15),
            cache: Decimal::ZERO,
        },
    );
    let mut a = costed("a", &fx, 1, 4, "9");
    let mut b = costed("b", &fx, 1, 6, "9");
    a.model = "m".into();
    b.model = "m".into();
    let r = usage_report(&[a, b], &prices).unwrap();
    // 20 in × 3 + 10 out × 15 = 210 per million
    assert_eq!(r.per_fix[0].cost_usd, Decimal::from_str("0.0002").unwrap());
    assert_eq!(r.per_fix[0].sessions, 2);
    assert_eq!(r.per_fix[0].candidate_count, Some(6));
}

fn reference_r(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn independent_cost_shows_weak_correlation() {
    let mut rng = StdRng::seed_from_u64(7);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..100)
        .map(|_| (rng.gen_range(1..200) as f64, rng.gen_range(0..10_000) as f64 / 1e4))
        .unzip();
    let r = pearson(&xs, &ys).unwrap();
    assert!((r - reference_r(&xs, &ys)).abs() < 1e-9);
    assert!(r.abs() < 0.2, "{r}");
    assert_eq!(pearson(&[1.0, 1.0], &[0.0, 2.0]), None);
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn analyse_end_to_end() {
    let fx = common::sleep_fixture();
    let m = materials(&fx);
    let t1 = common::trace_with("s1", Some(fx.id(1).clone()), &[grep("fsleep"), (ToolKind::Read, json!({}))]);
    let t2 = common::trace_with("s2", Some(fx.id(0).clone()), &[grep("orphan")]);
    let map = BTreeMap::from([(fx.id(1).clone(), m)]);
    let r = analyse(&[t1, t2], &map, &PriceTable::default()).unwrap();
    assert_eq!(r.schema, "analysis.v1");
    assert_eq!((r.sessions, r.fixes), (2, 2));
    assert_eq!(r.grep_calls.len(), 1);
    assert_eq!(r.fixes_without_materials, vec![fx.id(0).to_string()]);
    assert_eq!(r.pattern_stats.as_ref().unwrap().count, 2);
    assert_eq!(r.tool_distribution[&ToolKind::Grep], 1.0);
    let v = serde_json::to_value(&r).unwrap();
    assert!(v["provenance_histogram"].as_array().unwrap().iter().any(|h| h["label"] == "MESSAGE"));
}
