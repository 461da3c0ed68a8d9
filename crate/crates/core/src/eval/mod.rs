//! Datasets, per-fix and macro-averaged scores, paired tests, and the
//! `Fixes:`-tag collector.

mod collect;
mod dataset;
mod stats;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::gitio::CommitId;

pub use collect::{collect_fixes_dataset, parse_fixes_tags, CollectReport, SkippedTag};
pub use dataset::{load_dataset, save_dataset, DatasetEntry, DatasetError, DATASET_SCHEMA};
pub use stats::{
    rank_biserial, signed_ranks, wilcoxon_exact_p, wilcoxon_normal_p, wilcoxon_signed_rank,
    wilcoxon_with, PairedTestResult, SignedRanks, WilcoxonMethod, EXACT_MAX_N,
};

pub const REPORT_SCHEMA: &str = "report.v1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerFixScore {
    pub fix: CommitId,
    pub precision: f64,
    pub recall: f64,
    pub intersection: usize,
    pub pred_size: usize,
    pub gt_size: usize,
}

/// Precision and recall of one prediction. An empty prediction scores (0, 0).
pub fn score_fix(
    fix: &CommitId,
    gt: &BTreeSet<CommitId>,
    pred: &BTreeSet<CommitId>,
) -> Result<PerFixScore, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let intersection = gt.intersection(pred).count();
    let precision = if pred.is_empty() {
        0.0
    } else {
        intersection as f64 / pred.len() as f64
    };
    Ok(PerFixScore {
        fix: fix.clone(),
        precision,
        recall: intersection as f64 / gt.len() as f64,
        intersection,
        pred_size: pred.len(),
        gt_size: gt.len(),
    })
}

/// Harmonic mean; 0 when both are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub f1: f64,
    pub n: usize,
    pub per_fix: Vec<PerFixScore>,
}

impl EvalReport {
    /// `P R F1` with two decimals.
    pub fn display_line(&self) -> String {
        format!("{:.2} {:.2} {:.2}", self.macro_precision, self.macro_recall, self.f1)
    }

    pub fn to_json(&self, extra: Option<serde_json::Value>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "schema": REPORT_SCHEMA,
            "n": self.n,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "f1": self.f1,
            "display": {
                "precision": format!("{:.2}", self.macro_precision),
                "recall": format!("{:.2}", self.macro_recall),
                "f1": format!("{:.2}", self.f1),
            },
            "per_fix": self.per_fix,
        });
        if let Some(x) = extra {
            v["comparison"] = x;
        }
        v
    }
}

/// Macro-averages precision and recall, then takes their harmonic mean.
pub fn aggregate(scores: &[PerFixScore]) -> Result<EvalReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = scores.len() as f64;
    let macro_precision = scores.iter().map(|s| s.precision).sum::<f64>() / n;
    let macro_recall = scores.iter().map(|s| s.recall).sum::<f64>() / n;
    Ok(EvalReport {
        macro_precision,
        macro_recall,
        f1: f1_score(macro_precision, macro_recall),
        n: scores.len(),
        per_fix: scores.to_vec(),
    })
}
