mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use szzkit::agent::{read_trace_dir, SessionOptions, ToolKind};
use szzkit::batch::{
    config_hash, read_predictions, run_batch, BatchError, BatchOptions, PREDICTIONS_FILE,
    TRACES_DIR,
};
use szzkit::eval::{aggregate, score_fix};
use szzkit::pipelines::{PipelineConfig, PipelineKind};

fn options(root: &Path, out: &Path, kind: PipelineKind) -> BatchOptions {
    BatchOptions {
        pipeline: kind,
        config: PipelineConfig::default(),
        repo_root: root.to_path_buf(),
        out_dir: out.to_path_buf(),
        parallelism: 2,
        force: false,
        session: SessionOptions {
            record_timing: false,
            retry_base: Duration::ZERO,
            prices: common::demo_prices(),
            ..Default::default()
        },
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    walk(dir, dir)
}

fn walk(base: &Path, dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(base, &p));
        } else {
            out.insert(p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn simple_agent_batch_is_deterministic_and_resumable() {
    let root = tempfile::tempdir().unwrap();
    let demo = common::demo_dataset(root.path());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let opts = options(root.path(), a.path(), PipelineKind::SimpleAgent);
    let s = run_batch(&demo.entries, &opts, Some(&demo.script)).unwrap();
    assert_eq!((s.completed, s.skipped, s.failed, s.sessions), (3, 0, 0, 3));
    let mut serial = options(root.path(), b.path(), PipelineKind::SimpleAgent);
    serial.parallelism = 1;
    run_batch(&demo.entries, &serial, Some(&demo.script)).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));

    let preds = read_predictions(&a.path().join(PREDICTIONS_FILE)).unwrap();
    let fixes: Vec<_> = preds.iter().map(|p| p.fix.clone()).collect();
    let want: Vec<_> = demo.entries.iter().map(|e| e.fix.clone()).collect();
    assert_eq!(fixes, want);
    let scores: Vec<_> = demo
        .entries
        .iter()
        .zip(&preds)
        .map(|(e, p)| score_fix(&e.fix, &e.gt_bics, &p.bic_set()).unwrap())
        .collect();
    assert_eq!(aggregate(&scores).unwrap().display_line(), "1.00 1.00 1.00");

    let traces = read_trace_dir(&a.path().join(TRACES_DIR)).unwrap();
    assert_eq!(traces.len(), 3);
    for t in &traces {
        let tools: Vec<ToolKind> = t.result.trace.iter().map(|r| r.tool).collect();
        assert_eq!(tools, vec![ToolKind::Grep, ToolKind::Read, ToolKind::Write]);
        assert!(t.result.trace.iter().all(|r| r.ok), "{:?}", t.result.trace);
    }
    // 4 turns × (1000 in, 200 out) at 3 and 15 per million
    for p in &preds {
        assert_eq!((p.usage.input_tokens, p.usage.output_tokens), (4000, 800));
        assert_eq!(p.usage.cost_usd, "0.024".parse::<rust_decimal::Decimal>().unwrap());
    }

    let before = tree(a.path());
    let again = run_batch(&demo.entries, &opts, Some(&demo.script)).unwrap();
    assert_eq!((again.skipped, again.sessions), (3, 0));
    assert_eq!(tree(a.path()), before);

    let forced = BatchOptions { force: true, ..opts.clone() };
    let f = run_batch(&demo.entries, &forced, Some(&demo.script)).unwrap();
    assert_eq!((f.completed, f.sessions), (3, 3));
    assert_eq!(tree(a.path()), before);
}

#[test]
fn config_change_reruns() {
    let root = tempfile::tempdir().unwrap();
    let demo = common::demo_dataset(root.path());
    let out = tempfile::tempdir().unwrap();
    let opts = options(root.path(), out.path(), PipelineKind::Szz);
    run_batch(&demo.entries, &opts, None).unwrap();
    let mut other = opts.clone();
    other.config.vszz_max_depth = 3;
    assert_ne!(
        config_hash(PipelineKind::Szz, &opts.config, None),
        config_hash(PipelineKind::Szz, &other.config, None)
    );
    let s = run_batch(&demo.entries, &other, None).unwrap();
    assert_eq!((s.completed, s.skipped), (3, 0));
    let preds = read_predictions(&out.path().join(PREDICTIONS_FILE)).unwrap();
    assert_eq!(preds.len(), 3);
    assert!(preds.iter().all(|p| p.config_hash == config_hash(PipelineKind::Szz, &other.config, None)));
    assert_eq!(preds[0].bic_set(), common::ids_of(&common::basic(), [3]));
}

#[test]
fn missing_repo_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let mut demo = common::demo_dataset(root.path());
    demo.entries[1].repo_id = "absent".into();
    let out = tempfile::tempdir().unwrap();
    let target = out.path().join("run");
    let opts = options(root.path(), &target, PipelineKind::SimpleAgent);
    assert!(matches!(
        run_batch(&demo.entries, &opts, Some(&demo.script)),
        Err(BatchError::MissingRepo { .. })
    ));
    assert!(!target.exists());
    assert!(matches!(
        run_batch(&demo.entries[..1], &opts, None),
        Err(BatchError::NoBackend(_))
    ));
}

#[test]
fn per_fix_failures_are_recorded() {
    let root = tempfile::tempdir().unwrap();
    let mut demo = common::demo_dataset(root.path());
    demo.entries[0].fix = szzkit::gitio::CommitId::parse(&"ab".repeat(20)).unwrap();
    let out = tempfile::tempdir().unwrap();
    let opts = options(root.path(), out.path(), PipelineKind::Lszz);
    let s = run_batch(&demo.entries, &opts, None).unwrap();
    assert_eq!((s.completed, s.failed), (2, 1));
    let preds = read_predictions(&out.path().join(PREDICTIONS_FILE)).unwrap();
    assert!(preds[0].error.is_some() && preds[0].bics.is_empty());
    // failed entries are retried on the next run
    let s = run_batch(&demo.entries, &opts, None).unwrap();
    assert_eq!((s.skipped, s.failed), (2, 1));
}
