//! `dataset.v1` JSONL: one `{"repo_id", "fix", "gt_bics", ["collected_at"]}` object per line.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gitio::CommitId;

pub const DATASET_SCHEMA: &str = "dataset.v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub repo_id: String,
    pub fix: CommitId,
    pub gt_bics: BTreeSet<CommitId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collected_at: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}:{line}: schema violation: {reason}")]
    SchemaViolation {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Deserialize)]
struct Line {
    #[serde(default)]
    schema: Option<String>,
    #[serde(flatten)]
    entry: serde_json::Value,
}

impl DatasetEntry {
    pub fn validate(&self) -> Result<(), String> {
        if self.repo_id.is_empty() {
            return Err("repo_id is empty".into());
        }
        if self.gt_bics.is_empty() {
            return Err("gt_bics is empty".into());
        }
        if self.gt_bics.contains(&self.fix) {
            return Err("fix is listed among its own gt_bics".into());
        }
        Ok(())
    }
}

/// Loads and validates a dataset. Duplicate `(repo_id, fix)` pairs are rejected.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetEntry>, DatasetError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io(name.clone(), e))?;
    let violation = |line: usize, reason: String| DatasetError::SchemaViolation {
        path: name.clone(),
        line,
        reason,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| violation(line_no, e.to_string()))?;
        if let Some(s) = &line.schema {
            if s != DATASET_SCHEMA {
                return Err(violation(line_no, format!("unsupported schema {s:?}")));
            }
        }
        let entry: DatasetEntry =
            serde_json::from_value(line.entry).map_err(|e| violation(line_no, e.to_string()))?;
        entry.validate().map_err(|r| violation(line_no, r))?;
        if !seen.insert((entry.repo_id.clone(), entry.fix.clone())) {
            return Err(violation(
                line_no,
                format!("duplicate entry for {} in {}", entry.fix, entry.repo_id),
            ));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn save_dataset(entries: &[DatasetEntry], path: &Path) -> Result<(), DatasetError> {
    let name = path.display().to_string();
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).expect("serializable");
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| DatasetError::Io(name, e))
}
