use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetEntry;
use crate::candidates::MIN_PREFIX;
use crate::gitio::{CommitId, GitError, Repo};

static FIXES_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?im)^[ \t]*fixes:[ \t]*([0-9a-f]+)\b"#).unwrap());

/// Hex tokens of every `Fixes:` line, in order. A quoted subject after the
/// token is allowed and ignored.
pub fn parse_fixes_tags(message: &str) -> Vec<String> {
    FIXES_TAG
        .captures_iter(message)
        .map(|c| c[1].to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTag {
    pub fix: CommitId,
    pub token: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectReport {
    pub entries: Vec<DatasetEntry>,
    pub commits_scanned: usize,
    pub tags_resolved: usize,
    pub skipped: Vec<SkippedTag>,
}

/// Scans commits reachable from `tip` with `since <= commit_ts < until` for
/// `Fixes:` tags. Each tag is resolved to a full hash; tags that are shorter
/// than 7 hex digits, unknown, ambiguous, or name the fix itself are skipped
/// with a warning. Fixes with no resolvable tag are left out. Entries are
/// ordered by (commit time, hash).
pub fn collect_fixes_dataset(
    repo: &Repo,
    tip: &CommitId,
    since: i64,
    until: i64,
    repo_id: &str,
) -> Result<CollectReport, GitError> {
    let mut commits: Vec<_> = repo
        .all_commits(tip)?
        .into_iter()
        .filter(|c| c.commit_ts >= since && c.commit_ts < until)
        .collect();
    commits.sort_by(|a, b| (a.commit_ts, &a.id).cmp(&(b.commit_ts, &b.id)));

    let mut report = CollectReport {
        entries: Vec::new(),
        commits_scanned: commits.len(),
        tags_resolved: 0,
        skipped: Vec::new(),
    };
    for c in &commits {
        let mut gt = BTreeSet::new();
        for token in parse_fixes_tags(&c.message) {
            let outcome = if token.len() < MIN_PREFIX {
                Err(format!("shorter than {MIN_PREFIX} hex digits"))
            } else {
                match repo.resolve_commit(&token.to_ascii_lowercase()) {
                    Ok(id) if id == c.id => Err("refers to the fix itself".to_string()),
                    Ok(id) => Ok(id),
                    Err(GitError::Ambiguous(_)) => Err("ambiguous".to_string()),
                    Err(GitError::NotFound(_)) | Err(GitError::InvalidId(_)) => {
                        Err("does not resolve".to_string())
                    }
                    Err(e) => return Err(e),
                }
            };
            match outcome {
                Ok(id) => {
                    report.tags_resolved += 1;
                    gt.insert(id);
                }
                Err(reason) => {
                    log::warn!("skipping Fixes: tag {token} in {}: {reason}", c.id);
                    report.skipped.push(SkippedTag {
                        fix: c.id.clone(),
                        token,
                        reason,
                    });
                }
            }
        }
        if !gt.is_empty() {
            report.entries.push(DatasetEntry {
                repo_id: repo_id.to_string(),
                fix: c.id.clone(),
                gt_bics: gt,
                collected_at: None,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_lines() {
        let m = "net: fix it\n\nFixes: 0ef69e788411 (\"net/smc: x\")\nfixes: ABCDEF1\nFixes: https://example.com/1\nFixes: abc\nNot Fixes: 1234567\n";
        assert_eq!(parse_fixes_tags(m), vec!["0ef69e788411", "ABCDEF1", "abc"]);
    }
}
