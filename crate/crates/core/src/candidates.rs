//! Candidate sets drawn from the histories of the files a fix touches, hash
//! redaction, and the plain-text dump the direct-selection agent searches.
//!
//! Dump layout (`dump.v1`):
//!
//! ```text
//! <dir>/INDEX.txt                    one line per candidate:
//!                                    "<ordinal:06> <hash> <iso-time> <subject>"
//! <dir>/<ordinal:06>_<hash:12>.txt   "commit <hash>\nDate: <iso-time>\nSubject: <subject>\n\n"
//!                                    + message + "\n\n" + unified diff (5 lines of context)
//! ```
//!
//! Messages, subjects and diffs are redacted; a candidate's own hash in its
//! file name, `commit` line and index row is its identity and is left as is.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::{DateTime, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gitio::{CommitId, CommitMeta, GitError, Repo, DEFAULT_CONTEXT};

pub const PLACEHOLDER: &str = "COMMIT_HASH";
pub const MIN_PREFIX: usize = 7;
pub const INDEX_FILE: &str = "INDEX.txt";
pub const DUMP_SCHEMA: &str = "dump.v1";

#[derive(Debug, thiserror::Error)]
pub enum CandidateError {
    #[error("commit {0} has no parent")]
    NoParent(CommitId),
    #[error("dump directory {0} is not empty")]
    NonEmptyDir(PathBuf),
    #[error("dump i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Git(#[from] GitError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCommit {
    pub meta: CommitMeta,
    /// Unified diff against the first parent, redacted.
    pub diff_text: String,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub fix: CommitId,
    pub members: Vec<CandidateCommit>,
    pub source_files: Vec<String>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &CommitId> {
        self.members.iter().map(|m| &m.meta.id)
    }

    pub fn contains(&self, id: &CommitId) -> bool {
        self.members.iter().any(|m| &m.meta.id == id)
    }
}

/// Which hashes to hide, and from which length on a hex string counts as a reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RedactionSpec {
    gt_hashes: BTreeSet<CommitId>,
    min_prefix: usize,
    by_prefix: HashMap<String, Vec<CommitId>>,
}

impl RedactionSpec {
    pub fn new(gt_hashes: impl IntoIterator<Item = CommitId>) -> Self {
        Self::with_min_prefix(gt_hashes, MIN_PREFIX)
    }

    /// `min_prefix` below 7 is raised to 7.
    pub fn with_min_prefix(gt_hashes: impl IntoIterator<Item = CommitId>, min_prefix: usize) -> Self {
        let min_prefix = min_prefix.clamp(MIN_PREFIX, 40);
        let gt_hashes: BTreeSet<_> = gt_hashes.into_iter().collect();
        let mut by_prefix: HashMap<String, Vec<CommitId>> = HashMap::new();
        for h in &gt_hashes {
            by_prefix
                .entry(h.short(min_prefix).to_string())
                .or_default()
                .push(h.clone());
        }
        RedactionSpec {
            gt_hashes,
            min_prefix,
            by_prefix,
        }
    }

    /// No hashes to hide.
    pub fn none() -> Self {
        Self::new([])
    }

    pub fn gt_hashes(&self) -> &BTreeSet<CommitId> {
        &self.gt_hashes
    }

    pub fn min_prefix(&self) -> usize {
        self.min_prefix
    }

    fn is_gt_prefix(&self, token: &str) -> bool {
        token.len() >= self.min_prefix && {
            let t = token.to_ascii_lowercase();
            self.by_prefix
                .get(&t[..self.min_prefix])
                .is_some_and(|hs| hs.iter().any(|h| h.as_str().starts_with(&t)))
        }
    }

    /// Length of the longest gt-hash prefix (≥ min_prefix) starting at `at`.
    fn match_at(&self, bytes: &[u8], at: usize) -> Option<usize> {
        let head = bytes.get(at..at + self.min_prefix)?;
        if !head.iter().all(u8::is_ascii_hexdigit) {
            return None;
        }
        let key = String::from_utf8_lossy(head).to_ascii_lowercase();
        let hashes = self.by_prefix.get(&key)?;
        hashes
            .iter()
            .map(|h| {
                h.as_str()
                    .bytes()
                    .zip(&bytes[at..])
                    .take_while(|(a, b)| *a == b.to_ascii_lowercase())
                    .count()
            })
            .max()
    }
}

static FIXES_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*fixes:\s*([0-9a-f]+)").expect("valid regex"));

/// Deletes `Fixes:` lines that reference a ground-truth commit, then replaces
/// every remaining occurrence of a ground-truth hash prefix (at least
/// `min_prefix` characters) with `COMMIT_HASH`. Replacement runs to a fixpoint,
/// so the output never contains such a prefix and the function is idempotent.
pub fn redact(text: &str, spec: &RedactionSpec) -> String {
    if spec.gt_hashes.is_empty() {
        return text.to_string();
    }
    let mut kept = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        let drop = FIXES_LINE
            .captures(line)
            .is_some_and(|c| spec.is_gt_prefix(&c[1]));
        if !drop {
            kept.push_str(line);
        }
    }
    let mut current = kept;
    loop {
        let (next, changed) = replace_pass(&current, spec);
        if !changed {
            return next;
        }
        current = next;
    }
}

fn replace_pass(text: &str, spec: &RedactionSpec) -> (String, bool) {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut changed = false;
    let mut copied_to = 0;
    let mut i = 0;
    while i + spec.min_prefix <= bytes.len() {
        if let Some(len) = spec.match_at(bytes, i) {
            out.push_str(&text[copied_to..i]);
            out.push_str(PLACEHOLDER);
            i += len;
            copied_to = i;
            changed = true;
        } else {
            i += 1;
        }
    }
    out.push_str(&text[copied_to..]);
    (out, changed)
}

pub fn iso_time(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Union of the histories (up to the fix's first parent) of every file the fix
/// touches, sorted ascending by (committer time, hash). For renamed or deleted
/// files the history is taken under the pre-fix path.
pub fn collect_candidates(
    repo: &Repo,
    fix: &CommitId,
    follow_renames: bool,
    spec: &RedactionSpec,
) -> Result<CandidateSet, CandidateError> {
    let fix_meta = repo.commit_meta(fix)?;
    let parent = fix_meta
        .first_parent()
        .cloned()
        .ok_or_else(|| CandidateError::NoParent(fix.clone()))?;
    let changed = repo.changed_paths(fix)?;
    let mut history_paths = BTreeSet::new();
    let mut source_files = BTreeSet::new();
    for c in &changed {
        if let Some(p) = c.new_path.as_ref().or(c.old_path.as_ref()) {
            source_files.insert(p.clone());
        }
        if let Some(p) = c.old_path.as_ref().or(c.new_path.as_ref()) {
            history_paths.insert(p.clone());
        }
    }

    let mut metas: BTreeMap<CommitId, CommitMeta> = BTreeMap::new();
    for path in &history_paths {
        for m in repo.file_history(path, &parent, follow_renames)? {
            if m.commit_ts < fix_meta.commit_ts && m.id != *fix {
                metas.entry(m.id.clone()).or_insert(m);
            }
        }
    }
    let mut sorted: Vec<CommitMeta> = metas.into_values().collect();
    sorted.sort_by(|a, b| a.commit_ts.cmp(&b.commit_ts).then_with(|| a.id.cmp(&b.id)));

    let members = sorted
        .into_iter()
        .enumerate()
        .map(|(ordinal, meta)| {
            let diff = repo.get_commit_diff(&meta.id, DEFAULT_CONTEXT)?;
            Ok(CandidateCommit {
                diff_text: redact(&diff.render(), spec),
                meta,
                ordinal,
            })
        })
        .collect::<Result<Vec<_>, GitError>>()?;

    Ok(CandidateSet {
        fix: fix.clone(),
        members,
        source_files: source_files.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub dir: PathBuf,
    pub files: BTreeMap<usize, String>,
    pub index_path: String,
    pub bytes_total: u64,
}

pub fn dump_file_name(c: &CandidateCommit) -> String {
    format!("{:06}_{}.txt", c.ordinal, c.meta.id.short(12))
}

/// Renders one candidate's dump file body.
pub fn render_candidate(c: &CandidateCommit, spec: &RedactionSpec) -> String {
    let subject = redact(&c.meta.subject, spec);
    let message = redact(&c.meta.message, spec);
    let diff = redact(&c.diff_text, spec);
    format!(
        "commit {}\nDate: {}\nSubject: {}\n\n{}\n\n{}",
        c.meta.id,
        iso_time(c.meta.commit_ts),
        subject.trim_end(),
        message.trim_end(),
        diff
    )
}

fn index_line(c: &CandidateCommit, spec: &RedactionSpec) -> String {
    format!(
        "{:06} {} {} {}\n",
        c.ordinal,
        c.meta.id,
        iso_time(c.meta.commit_ts),
        redact(&c.meta.subject, spec).trim_end()
    )
}

/// Writes the candidate dump into `out_dir`, which must be absent or empty.
pub fn materialize_dump(
    set: &CandidateSet,
    out_dir: &Path,
    spec: &RedactionSpec,
) -> Result<DumpManifest, CandidateError> {
    if out_dir.exists() {
        if fs::read_dir(out_dir)?.next().is_some() {
            return Err(CandidateError::NonEmptyDir(out_dir.to_path_buf()));
        }
    } else {
        fs::create_dir_all(out_dir)?;
    }
    let mut files = BTreeMap::new();
    let mut bytes_total = 0u64;
    let mut index = String::new();
    for c in &set.members {
        let name = dump_file_name(c);
        let body = render_candidate(c, spec);
        write_new(&out_dir.join(&name), body.as_bytes())?;
        bytes_total += body.len() as u64;
        index.push_str(&index_line(c, spec));
        files.insert(c.ordinal, name);
    }
    write_new(&out_dir.join(INDEX_FILE), index.as_bytes())?;
    bytes_total += index.len() as u64;
    Ok(DumpManifest {
        dir: out_dir.to_path_buf(),
        files,
        index_path: INDEX_FILE.to_string(),
        bytes_total,
    })
}

fn write_new(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = fs::OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(bytes)
}
