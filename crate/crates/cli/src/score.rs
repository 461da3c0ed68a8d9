use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use szzkit::batch::read_predictions;
use szzkit::eval::{
    aggregate, f1_score, load_dataset, score_fix, wilcoxon_signed_rank, DatasetEntry,
    EvalError, EvalReport, PerFixScore,
};
use szzkit::gitio::CommitId;

use crate::Status;

/// Per-fix scores in dataset order. Every prediction must match a dataset entry
/// and every entry must have a prediction; failed runs score as empty.
pub fn score_against(dataset: &[DatasetEntry], predictions: &Path) -> Result<Vec<PerFixScore>> {
    let mut by_key: BTreeMap<(String, CommitId), BTreeSet<CommitId>> = BTreeMap::new();
    for r in read_predictions(predictions)? {
        let key = (r.repo_id.clone(), r.fix.clone());
        if r.error.is_some() {
            log::warn!("{} {}: run failed, scored as an empty prediction", r.repo_id, r.fix);
        }
        if by_key.insert(key, r.bic_set()).is_some() {
            bail!("{}: more than one prediction for {} {}", predictions.display(), r.repo_id, r.fix);
        }
    }
    let mut scores = Vec::with_capacity(dataset.len());
    let mut missing = Vec::new();
    for e in dataset {
        match by_key.remove(&(e.repo_id.clone(), e.fix.clone())) {
            Some(pred) => scores.push(score_fix(&e.fix, &e.gt_bics, &pred)?),
            None => missing.push(format!("{} {}", e.repo_id, e.fix)),
        }
    }
    if !by_key.is_empty() {
        let extra: Vec<String> = by_key.keys().map(|(r, f)| format!("{r} {f}")).collect();
        bail!("{}: predictions for fixes not in the dataset: {}", predictions.display(), extra.join(", "));
    }
    if !missing.is_empty() {
        bail!("{}: no prediction for {}", predictions.display(), missing.join(", "));
    }
    Ok(scores)
}

fn per_fix_f1(r: &EvalReport) -> Vec<f64> {
    r.per_fix.iter().map(|s| f1_score(s.precision, s.recall)).collect()
}

/// Paired comparison on per-fix F1.
fn comparison(a: &EvalReport, b: &EvalReport, other: &Path) -> Result<serde_json::Value> {
    let (fa, fb) = (per_fix_f1(a), per_fix_f1(b));
    let mut v = json!({
        "other": other.display().to_string(),
        "metric": "per_fix_f1",
        "other_macro_precision": b.macro_precision,
        "other_macro_recall": b.macro_recall,
        "other_f1": b.f1,
    });
    match wilcoxon_signed_rank(&fa, &fb) {
        Ok(t) => {
            v["status"] = json!("OK");
            v["statistic_w"] = json!(t.statistic_w);
            v["p_value"] = json!(t.p_value);
            v["effect_r"] = json!(t.effect_r);
            v["n_effective"] = json!(t.n_effective);
            v["method"] = json!(t.method);
        }
        Err(EvalError::AllZeroDifferences) => v["status"] = json!("ALL_ZERO_DIFFERENCES"),
        Err(e) => return Err(e.into()),
    }
    Ok(v)
}

pub fn cmd_score(
    dataset: &Path,
    predictions: &Path,
    compare: Option<&Path>,
    out: Option<&Path>,
) -> Result<Status> {
    let entries = load_dataset(dataset)?;
    let report = aggregate(&score_against(&entries, predictions)?)?;
    println!("P R F1: {}", report.display_line());
    let extra = match compare {
        None => None,
        Some(other) => {
            let b = aggregate(&score_against(&entries, other)?)?;
            println!("other P R F1: {}", b.display_line());
            let c = comparison(&report, &b, other)?;
            match c["status"].as_str() {
                Some("OK") => println!(
                    "wilcoxon W={} p={:.4} r={:.3} (n={})",
                    c["statistic_w"], c["p_value"].as_f64().unwrap_or(f64::NAN),
                    c["effect_r"].as_f64().unwrap_or(f64::NAN), c["n_effective"]
                ),
                _ => println!("wilcoxon: ALL_ZERO_DIFFERENCES"),
            }
            Some(c)
        }
    };
    let path: PathBuf = match out {
        Some(p) => p.to_path_buf(),
        None => predictions.parent().unwrap_or(Path::new(".")).join("report.json"),
    };
    let text = serde_json::to_string_pretty(&report.to_json(extra))? + "\n";
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(Status::Ok)
}
