//! Classic SZZ: blame every line a fix deletes, at the fix's parent, and call
//! the blamed commits candidates. L-SZZ and R-SZZ pick one of them; V-SZZ keeps
//! walking back while a line was only reformatted.
//!
//! Tie rules for L-SZZ/R-SZZ and the whitespace-trimmed line identity used by
//! V-SZZ are this crate's choices, not those of the original tools.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::gitio::{BlameLine, CommitDiff, CommitId, GitError, LineKind, Repo};

pub const DEFAULT_MAX_DEPTH: u32 = 16;
pub const SCHEMA: &str = "szz_result.v1";

#[derive(Debug, thiserror::Error)]
pub enum SzzError {
    #[error("commit {0} has no parent")]
    NoParent(CommitId),
    #[error(transparent)]
    Git(#[from] GitError),
}

#[derive(Debug, Clone)]
pub struct SzzOptions {
    pub skip_whitespace_only: bool,
}

impl Default for SzzOptions {
    fn default() -> Self {
        SzzOptions {
            skip_whitespace_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub file: String,
    pub old_lineno: u32,
    pub content: String,
    pub introducer: CommitId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SzzResult {
    pub fix: CommitId,
    pub attributions: Vec<Attribution>,
    pub candidates: BTreeSet<CommitId>,
    pub per_candidate_line_count: BTreeMap<CommitId, usize>,
    /// Committer timestamps of the candidates, used by the selectors' tie rules.
    pub candidate_commit_ts: BTreeMap<CommitId, i64>,
}

#[derive(Serialize)]
struct Versioned<'a> {
    schema: &'static str,
    #[serde(flatten)]
    result: &'a SzzResult,
}

impl SzzResult {
    fn from_attributions(
        repo: &Repo,
        fix: CommitId,
        attributions: Vec<Attribution>,
    ) -> Result<Self, SzzError> {
        let mut per_candidate_line_count = BTreeMap::new();
        for a in &attributions {
            *per_candidate_line_count
                .entry(a.introducer.clone())
                .or_insert(0) += 1;
        }
        let candidates: BTreeSet<_> = per_candidate_line_count.keys().cloned().collect();
        let candidate_commit_ts = candidates
            .iter()
            .map(|c| Ok((c.clone(), repo.commit_meta(c)?.commit_ts)))
            .collect::<Result<_, GitError>>()?;
        Ok(SzzResult {
            fix,
            attributions,
            candidates,
            per_candidate_line_count,
            candidate_commit_ts,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// `szz_result.v1` JSON, keys in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Versioned {
            schema: SCHEMA,
            result: self,
        })
        .expect("serializable")
    }
}

/// A deleted line of the fix, located at the fix's first parent.
struct DeletedLine {
    path: String,
    lineno: u32,
    content: String,
}

fn deleted_lines(diff: &CommitDiff, opts: &SzzOptions) -> Vec<DeletedLine> {
    let mut out = Vec::new();
    for file in diff.files.iter().filter(|f| !f.binary) {
        let Some(path) = file.old_path.as_deref() else {
            continue;
        };
        for line in file.lines().filter(|l| l.kind == LineKind::Removed) {
            if opts.skip_whitespace_only && line.content.trim().is_empty() {
                continue;
            }
            out.push(DeletedLine {
                path: path.to_string(),
                lineno: line.old_lineno.expect("removed lines carry old numbers"),
                content: line.content.clone(),
            });
        }
    }
    out
}

fn parent_of(repo: &Repo, fix: &CommitId) -> Result<CommitId, SzzError> {
    repo.commit_meta(fix)?
        .first_parent()
        .cloned()
        .ok_or_else(|| SzzError::NoParent(fix.clone()))
}

/// Blames each line the fix deletes at the fix's first parent.
pub fn szz_candidates(repo: &Repo, fix: &CommitId, opts: &SzzOptions) -> Result<SzzResult, SzzError> {
    let parent = parent_of(repo, fix)?;
    let diff = repo.get_commit_diff(fix, 0)?;
    let mut attributions = Vec::new();
    for del in deleted_lines(&diff, opts) {
        let introducer = match repo.blame_introducer(&parent, &del.path, del.lineno) {
            Ok(c) => c,
            // Text in the diff but NUL bytes past git's sniff window.
            Err(GitError::BinaryFile { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        attributions.push(Attribution {
            file: del.path,
            old_lineno: del.lineno,
            content: del.content,
            introducer,
        });
    }
    SzzResult::from_attributions(repo, fix.clone(), attributions)
}

/// L-SZZ: the candidate blamed for the most deleted lines.
/// Ties go to the older commit, then the smaller hash.
pub fn lszz_select(result: &SzzResult) -> Option<CommitId> {
    result
        .per_candidate_line_count
        .iter()
        .max_by(|(a, na), (b, nb)| {
            na.cmp(nb)
                .then_with(|| ts(result, b).cmp(&ts(result, a)))
                .then_with(|| b.cmp(a))
        })
        .map(|(c, _)| c.clone())
}

/// R-SZZ: the most recent candidate by committer time. Ties go to the smaller hash.
pub fn rszz_select(result: &SzzResult) -> Option<CommitId> {
    result
        .candidates
        .iter()
        .max_by(|a, b| ts(result, a).cmp(&ts(result, b)).then_with(|| b.cmp(a)))
        .cloned()
}

fn ts(result: &SzzResult, c: &CommitId) -> i64 {
    result.candidate_commit_ts.get(c).copied().unwrap_or(i64::MIN)
}

/// V-SZZ: starting from the SZZ introducer of each deleted line, keep following
/// the line back while the introducing commit merely rewrote an equivalent line
/// (same text after trimming whitespace, removed in the same hunk). Stops when
/// the line first appears or after `max_depth` steps.
pub fn vszz_candidates(
    repo: &Repo,
    fix: &CommitId,
    max_depth: u32,
    opts: &SzzOptions,
) -> Result<SzzResult, SzzError> {
    let parent = parent_of(repo, fix)?;
    let diff = repo.get_commit_diff(fix, 0)?;
    let mut diffs: HashMap<CommitId, CommitDiff> = HashMap::new();
    let mut attributions = Vec::new();
    for del in deleted_lines(&diff, opts) {
        let mut at = match repo.blame_line(&parent, &del.path, del.lineno) {
            Ok(b) => b,
            Err(GitError::BinaryFile { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        for _ in 0..max_depth {
            match previous_version(repo, &mut diffs, &at)? {
                Some(prev) => at = prev,
                None => break,
            }
        }
        attributions.push(Attribution {
            file: del.path,
            old_lineno: del.lineno,
            content: del.content,
            introducer: at.commit,
        });
    }
    SzzResult::from_attributions(repo, fix.clone(), attributions)
}

/// If `line` was a whitespace-level rewrite of an older line in its commit,
/// returns the blame of that older line at the commit's parent.
fn previous_version(
    repo: &Repo,
    diffs: &mut HashMap<CommitId, CommitDiff>,
    line: &BlameLine,
) -> Result<Option<BlameLine>, SzzError> {
    let Some(parent) = repo.commit_meta(&line.commit)?.first_parent().cloned() else {
        return Ok(None);
    };
    if !diffs.contains_key(&line.commit) {
        diffs.insert(line.commit.clone(), repo.get_commit_diff(&line.commit, 0)?);
    }
    let diff = &diffs[&line.commit];
    let Some(file) = diff
        .files
        .iter()
        .find(|f| !f.binary && f.new_path.as_deref() == Some(line.orig_path.as_str()))
    else {
        return Ok(None);
    };
    let Some(old_path) = file.old_path.clone() else {
        return Ok(None);
    };
    for hunk in &file.hunks {
        let Some(added) = hunk
            .lines
            .iter()
            .find(|l| l.kind == LineKind::Added && l.new_lineno == Some(line.orig_lineno))
        else {
            continue;
        };
        let key = added.content.trim();
        let Some(removed) = hunk
            .lines
            .iter()
            .find(|l| l.kind == LineKind::Removed && l.content.trim() == key)
        else {
            return Ok(None);
        };
        let lineno = removed.old_lineno.expect("removed lines carry old numbers");
        return match repo.blame_line(&parent, &old_path, lineno) {
            Ok(b) => Ok(Some(b)),
            Err(GitError::BinaryFile { .. } | GitError::FileAbsent { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        };
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(c: char) -> CommitId {
        CommitId::parse(&c.to_string().repeat(40)).unwrap()
    }

    fn result(counts: &[(char, usize, i64)]) -> SzzResult {
        let mut r = SzzResult {
            fix: id('f'),
            attributions: Vec::new(),
            candidates: BTreeSet::new(),
            per_candidate_line_count: BTreeMap::new(),
            candidate_commit_ts: BTreeMap::new(),
        };
        for &(c, n, t) in counts {
            for k in 0..n {
                r.attributions.push(Attribution {
                    file: "f".into(),
                    old_lineno: k as u32 + 1,
                    content: "x".into(),
                    introducer: id(c),
                });
            }
            r.candidates.insert(id(c));
            r.per_candidate_line_count.insert(id(c), n);
            r.candidate_commit_ts.insert(id(c), t);
        }
        r
    }

    #[test]
    fn lszz_strict_max_and_empty() {
        assert_eq!(lszz_select(&result(&[('3', 3, 10), ('6', 1, 20)])), Some(id('3')));
        assert_eq!(lszz_select(&result(&[])), None);
    }

    #[test]
    fn lszz_tie_prefers_older_then_hash() {
        assert_eq!(lszz_select(&result(&[('3', 2, 10), ('6', 2, 20)])), Some(id('3')));
        assert_eq!(lszz_select(&result(&[('6', 2, 10), ('3', 2, 20)])), Some(id('6')));
        assert_eq!(lszz_select(&result(&[('6', 2, 10), ('3', 2, 10)])), Some(id('3')));
    }

    #[test]
    fn rszz_most_recent() {
        assert_eq!(rszz_select(&result(&[('3', 3, 10), ('6', 1, 20)])), Some(id('6')));
        assert_eq!(rszz_select(&result(&[('3', 1, 10)])), Some(id('3')));
        assert_eq!(rszz_select(&result(&[])), None);
        assert_eq!(rszz_select(&result(&[('6', 1, 10), ('3', 1, 10)])), Some(id('3')));
    }

    #[test]
    fn json_is_versioned() {
        let j = result(&[('3', 1, 10)]).to_json();
        assert!(j.starts_with("{\"schema\":\"szz_result.v1\",\"fix\":"));
    }
}
