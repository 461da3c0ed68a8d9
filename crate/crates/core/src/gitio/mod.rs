//! Read-only access to a local git repository through the `git` binary.
//!
//! Everything goes through porcelain-stable plumbing commands (`diff-tree`,
//! `blame --porcelain`, `log --format`, `cat-file`). Merge commits are diffed
//! against their first parent. Blame always follows whole-file renames (git's
//! own behavior); `file_history` follows renames when `follow_renames` is set.

mod diff;

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use diff::{
    parse_unified, CommitDiff, DiffLine, DiffParseError, FileDiff, FileStatus, Hunk, LineKind,
};

/// Hash of the empty tree, used as the "parent" of root commits.
const EMPTY_TREE: &str = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";

/// Number of leading bytes inspected for NUL when deciding whether a blob is binary.
const BINARY_SNIFF: usize = 8000;

pub const DEFAULT_CONTEXT: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum GitError {
    #[error("revision not found: {0}")]
    NotFound(String),
    #[error("ambiguous revision: {0}")]
    Ambiguous(String),
    #[error("invalid commit id {0:?}")]
    InvalidId(String),
    #[error("line {line} out of range for {path} ({len} lines)")]
    LineOutOfRange { path: String, line: u32, len: usize },
    #[error("{path} does not exist at {commit}")]
    FileAbsent { path: String, commit: CommitId },
    #[error("{path} is binary at {commit}")]
    BinaryFile { path: String, commit: CommitId },
    #[error("commit {0} has no parent")]
    NoParent(CommitId),
    #[error("git {args}: {stderr}")]
    Command { args: String, stderr: String },
    #[error("unexpected git output: {0}")]
    Parse(String),
    #[error(transparent)]
    Diff(#[from] DiffParseError),
    #[error("repository i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GitError> = std::result::Result<T, E>;

/// A full 40-character lowercase hex commit hash.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CommitId(String);

impl CommitId {
    pub fn parse(s: &str) -> Result<Self> {
        if s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(CommitId(s.to_string()))
        } else {
            Err(GitError::InvalidId(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First `n` hex characters.
    pub fn short(&self, n: usize) -> &str {
        &self.0[..n.min(40)]
    }
}

impl fmt::Display for CommitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CommitId {
    type Error = GitError;
    fn try_from(s: String) -> Result<Self> {
        CommitId::parse(&s)
    }
}

impl From<CommitId> for String {
    fn from(c: CommitId) -> String {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub id: CommitId,
    pub parents: Vec<CommitId>,
    pub author_ts: i64,
    pub commit_ts: i64,
    pub subject: String,
    pub message: String,
}

impl CommitMeta {
    pub fn first_parent(&self) -> Option<&CommitId> {
        self.parents.first()
    }

    pub fn is_merge(&self) -> bool {
        self.parents.len() > 1
    }
}

/// Contents of a file at a commit. `text` is lossily decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileContent {
    pub text: String,
    pub binary: bool,
}

/// Attribution of one line by `git blame`: the commit plus where the line
/// lived inside that commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlameLine {
    pub commit: CommitId,
    pub orig_path: String,
    pub orig_lineno: u32,
}

#[derive(Debug, Clone)]
pub struct RepoOptions {
    pub follow_renames: bool,
    /// Drop merge commits from file histories.
    pub skip_merges: bool,
    /// Entries per memo table; 0 disables memoization.
    pub cache_capacity: usize,
}

impl Default for RepoOptions {
    fn default() -> Self {
        RepoOptions {
            follow_renames: true,
            skip_merges: false,
            cache_capacity: 4096,
        }
    }
}

/// Bounded memo table. Cleared wholesale when full.
struct Memo<K, V> {
    cap: usize,
    map: Mutex<HashMap<K, V>>,
}

impl<K: Eq + Hash, V: Clone> Memo<K, V> {
    fn new(cap: usize) -> Self {
        Memo {
            cap,
            map: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, k: &K) -> Option<V> {
        self.map.lock().unwrap().get(k).cloned()
    }

    fn put(&self, k: K, v: V) {
        if self.cap == 0 {
            return;
        }
        let mut m = self.map.lock().unwrap();
        if m.len() >= self.cap {
            m.clear();
        }
        m.insert(k, v);
    }
}

/// Handle on a local repository. Cheap to share across threads.
pub struct Repo {
    root: PathBuf,
    opts: RepoOptions,
    meta: Memo<CommitId, Arc<CommitMeta>>,
    blame: Memo<(CommitId, String), Arc<Vec<BlameLine>>>,
}

impl fmt::Debug for Repo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Repo").field("root", &self.root).finish()
    }
}

impl Repo {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, RepoOptions::default())
    }

    pub fn open_with(path: impl AsRef<Path>, opts: RepoOptions) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(GitError::NotFound(root.display().to_string()));
        }
        let repo = Repo {
            root,
            meta: Memo::new(opts.cache_capacity),
            blame: Memo::new(opts.cache_capacity),
            opts,
        };
        let out = repo.git_raw(&["rev-parse", "--git-dir"])?;
        if !out.status.success() {
            return Err(GitError::NotFound(format!(
                "{} is not a git repository",
                repo.root.display()
            )));
        }
        Ok(repo)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn options(&self) -> &RepoOptions {
        &self.opts
    }

    fn git_raw(&self, args: &[&str]) -> Result<Output> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args([
                "-c",
                "core.quotepath=false",
                "-c",
                "log.showSignature=false",
                "-c",
                "diff.noprefix=false",
                "-c",
                "diff.mnemonicprefix=false",
            ])
            .args(args)
            .env("LC_ALL", "C")
            .env("GIT_TERMINAL_PROMPT", "0")
            .stdin(Stdio::null())
            .output()?;
        Ok(out)
    }

    fn git(&self, args: &[&str]) -> Result<Vec<u8>> {
        let out = self.git_raw(args)?;
        if out.status.success() {
            Ok(out.stdout)
        } else {
            Err(GitError::Command {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            })
        }
    }

    /// Resolves a hash, unique hash prefix (≥4 hex chars) or symbolic ref to a commit.
    pub fn resolve_commit(&self, rev: &str) -> Result<CommitId> {
        let rev = rev.trim();
        if rev.is_empty() || rev.starts_with('-') {
            return Err(GitError::NotFound(rev.to_string()));
        }
        let spec = format!("{rev}^{{commit}}");
        let out = self.git_raw(&["rev-parse", "--verify", "--quiet", &spec])?;
        if out.status.success() {
            let s = String::from_utf8_lossy(&out.stdout);
            return CommitId::parse(s.trim());
        }
        // --quiet suppresses the ambiguity message; ask again without it.
        let loud = self.git_raw(&["rev-parse", "--verify", &spec])?;
        let stderr = String::from_utf8_lossy(&loud.stderr);
        if stderr.contains("ambiguous") {
            Err(GitError::Ambiguous(rev.to_string()))
        } else {
            Err(GitError::NotFound(rev.to_string()))
        }
    }

    pub fn commit_meta(&self, id: &CommitId) -> Result<Arc<CommitMeta>> {
        if let Some(m) = self.meta.get(id) {
            return Ok(m);
        }
        let mut metas = self.log_records(&["log", "--no-walk=unsorted", id.as_str(), "--"])?;
        let meta = Arc::new(metas.pop().ok_or_else(|| GitError::NotFound(id.to_string()))?);
        self.meta.put(id.clone(), meta.clone());
        Ok(meta)
    }

    pub fn first_parent(&self, id: &CommitId) -> Result<CommitId> {
        self.commit_meta(id)?
            .first_parent()
            .cloned()
            .ok_or_else(|| GitError::NoParent(id.clone()))
    }

    /// True when `ancestor` is reachable from (or equal to) `descendant`.
    pub fn is_ancestor(&self, ancestor: &CommitId, descendant: &CommitId) -> Result<bool> {
        let out = self.git_raw(&[
            "merge-base",
            "--is-ancestor",
            ancestor.as_str(),
            descendant.as_str(),
        ])?;
        match out.status.code() {
            Some(0) => Ok(true),
            Some(1) => Ok(false),
            _ => Err(GitError::Command {
                args: "merge-base --is-ancestor".into(),
                stderr: String::from_utf8_lossy(&out.stderr).trim().into(),
            }),
        }
    }

    /// Runs a `git log` style command with the record format below and parses it.
    fn log_records(&self, args: &[&str]) -> Result<Vec<CommitMeta>> {
        let format = "--format=%x1e%H%x1f%P%x1f%at%x1f%ct%x1f%B";
        let mut full: Vec<&str> = vec![args[0], format];
        full.extend_from_slice(&args[1..]);
        let raw = self.git(&full)?;
        let text = String::from_utf8_lossy(&raw);
        text.split('\x1e')
            .filter(|r| !r.trim().is_empty())
            .map(parse_log_record)
            .collect()
    }

    /// Every commit reachable from `tip`, in git's default order.
    pub fn all_commits(&self, tip: &CommitId) -> Result<Vec<CommitMeta>> {
        self.log_records(&["log", tip.as_str(), "--"])
    }

    /// Diff of `id` against its first parent (or the empty tree for root commits).
    pub fn get_commit_diff(&self, id: &CommitId, context_width: u32) -> Result<CommitDiff> {
        let meta = self.commit_meta(id)?;
        let parent = meta
            .first_parent()
            .map(|p| p.as_str().to_string())
            .unwrap_or_else(|| EMPTY_TREE.to_string());
        let unified = format!("-U{context_width}");
        let raw = self.git(&[
            "diff-tree",
            "-p",
            "-r",
            "-M",
            "--no-color",
            "--no-ext-diff",
            "--no-textconv",
            "--full-index",
            &unified,
            &parent,
            id.as_str(),
        ])?;
        let mut files = parse_unified(&raw)?;
        files.sort_by(|a, b| a.path().cmp(b.path()));
        Ok(CommitDiff {
            commit: id.clone(),
            files,
            context_width,
        })
    }

    /// Paths touched by `id` relative to its first parent: new path for renames,
    /// old path for deletions. Sorted, unique.
    pub fn list_modified_files(&self, id: &CommitId) -> Result<Vec<String>> {
        Ok(self
            .changed_paths(id)?
            .into_iter()
            .map(|c| c.new_path.or(c.old_path).unwrap_or_default())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect())
    }

    /// Old/new path pairs for every file touched by `id`.
    pub fn changed_paths(&self, id: &CommitId) -> Result<Vec<ChangedPath>> {
        let meta = self.commit_meta(id)?;
        let parent = meta
            .first_parent()
            .map(|p| p.as_str().to_string())
            .unwrap_or_else(|| EMPTY_TREE.to_string());
        let raw = self.git(&["diff-tree", "-r", "-M", "-z", "--name-status", &parent, id.as_str()])?;
        let mut fields = raw
            .split(|&b| b == 0)
            .map(|f| String::from_utf8_lossy(f).into_owned());
        let mut out = Vec::new();
        while let Some(status) = fields.next() {
            if status.is_empty() {
                continue;
            }
            let first = fields
                .next()
                .ok_or_else(|| GitError::Parse("name-status missing path".into()))?;
            let c = match status.as_bytes()[0] {
                b'A' => ChangedPath {
                    old_path: None,
                    new_path: Some(first),
                },
                b'D' => ChangedPath {
                    old_path: Some(first),
                    new_path: None,
                },
                b'R' | b'C' => {
                    let second = fields
                        .next()
                        .ok_or_else(|| GitError::Parse("rename missing target".into()))?;
                    ChangedPath {
                        old_path: Some(first),
                        new_path: Some(second),
                    }
                }
                _ => ChangedPath {
                    old_path: Some(first.clone()),
                    new_path: Some(first),
                },
            };
            out.push(c);
        }
        Ok(out)
    }

    /// File contents at a commit; `None` when the path is not in the tree.
    pub fn file_at(&self, id: &CommitId, path: &str) -> Result<Option<FileContent>> {
        let spec = format!("{}:{}", id, path);
        let out = self.git_raw(&["cat-file", "blob", &spec])?;
        if !out.status.success() {
            // Distinguish a bad commit from a missing path.
            self.commit_meta(id)?;
            return Ok(None);
        }
        let sniff = &out.stdout[..out.stdout.len().min(BINARY_SNIFF)];
        Ok(Some(FileContent {
            binary: sniff.contains(&0),
            text: String::from_utf8_lossy(&out.stdout).into_owned(),
        }))
    }

    /// Blame of every line of `path` at `at`. Memoized.
    pub fn blame_file(&self, at: &CommitId, path: &str) -> Result<Arc<Vec<BlameLine>>> {
        let key = (at.clone(), path.to_string());
        if let Some(b) = self.blame.get(&key) {
            return Ok(b);
        }
        let content = self.file_at(at, path)?.ok_or_else(|| GitError::FileAbsent {
            path: path.to_string(),
            commit: at.clone(),
        })?;
        if content.binary {
            return Err(GitError::BinaryFile {
                path: path.to_string(),
                commit: at.clone(),
            });
        }
        let raw = self.git(&["blame", "--porcelain", at.as_str(), "--", path])?;
        let lines = Arc::new(parse_blame_porcelain(&raw)?);
        self.blame.put(key, lines.clone());
        Ok(lines)
    }

    /// Full attribution (commit, path and line number inside that commit) for one line.
    pub fn blame_line(&self, at: &CommitId, path: &str, line: u32) -> Result<BlameLine> {
        let lines = self.blame_file(at, path)?;
        if line == 0 || line as usize > lines.len() {
            return Err(GitError::LineOutOfRange {
                path: path.to_string(),
                line,
                len: lines.len(),
            });
        }
        Ok(lines[line as usize - 1].clone())
    }

    /// The commit that last modified `line` of `path` as of `at`.
    pub fn blame_introducer(&self, at: &CommitId, path: &str, line: u32) -> Result<CommitId> {
        Ok(self.blame_line(at, path, line)?.commit)
    }

    /// Commits reachable from `until` that touched `path`, newest first by commit time.
    /// A path that never existed yields an empty list.
    pub fn file_history(
        &self,
        path: &str,
        until: &CommitId,
        follow_renames: bool,
    ) -> Result<Vec<CommitMeta>> {
        let mut args = vec!["log", until.as_str()];
        if follow_renames {
            args.push("--follow");
        }
        if self.opts.skip_merges {
            args.push("--no-merges");
        }
        args.extend(["--", path]);
        let mut seen = std::collections::HashSet::new();
        let mut out: Vec<CommitMeta> = self
            .log_records(&args)?
            .into_iter()
            .filter(|m| seen.insert(m.id.clone()))
            .collect();
        out.sort_by(|a, b| b.commit_ts.cmp(&a.commit_ts).then_with(|| a.id.cmp(&b.id)));
        for m in &out {
            self.meta.put(m.id.clone(), Arc::new(m.clone()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangedPath {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
}

fn parse_log_record(rec: &str) -> Result<CommitMeta> {
    let mut parts = rec.splitn(5, '\x1f');
    let mut next = |what: &str| {
        parts
            .next()
            .ok_or_else(|| GitError::Parse(format!("log record missing {what}")))
    };
    let id = CommitId::parse(next("hash")?.trim())?;
    let parents = next("parents")?
        .split_whitespace()
        .map(CommitId::parse)
        .collect::<Result<Vec<_>>>()?;
    let author_ts = next("author time")?
        .trim()
        .parse()
        .map_err(|_| GitError::Parse("author time".into()))?;
    let commit_ts = next("commit time")?
        .trim()
        .parse()
        .map_err(|_| GitError::Parse("commit time".into()))?;
    let body = next("message")?;
    // git appends one newline after %B and one record separator newline.
    let message = body.trim_end_matches('\n').to_string();
    let subject = message.lines().next().unwrap_or_default().to_string();
    Ok(CommitMeta {
        id,
        parents,
        author_ts,
        commit_ts,
        subject,
        message,
    })
}

fn parse_blame_porcelain(raw: &[u8]) -> Result<Vec<BlameLine>> {
    let mut out = Vec::new();
    let mut filenames: HashMap<CommitId, String> = HashMap::new();
    let mut pending: Option<(CommitId, u32)> = None;
    for line in raw.split(|&b| b == b'\n') {
        if let Some(content) = line.strip_prefix(b"\t") {
            let _ = content;
            let (commit, orig) = pending
                .take()
                .ok_or_else(|| GitError::Parse("blame content without header".into()))?;
            let orig_path = filenames
                .get(&commit)
                .cloned()
                .ok_or_else(|| GitError::Parse("blame line without filename".into()))?;
            out.push(BlameLine {
                commit,
                orig_path,
                orig_lineno: orig,
            });
            continue;
        }
        let text = String::from_utf8_lossy(line);
        if let Some(name) = text.strip_prefix("filename ") {
            if let Some((c, _)) = &pending {
                filenames.insert(c.clone(), diff::unquote(name));
            }
            continue;
        }
        let mut fields = text.split(' ');
        let first = fields.next().unwrap_or_default();
        if first.len() == 40 && pending.is_none() {
            if let Ok(id) = CommitId::parse(first) {
                let orig = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| GitError::Parse("blame header".into()))?;
                pending = Some((id, orig));
            }
        }
    }
    Ok(out)
}
