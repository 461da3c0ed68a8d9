//! Synthetic repositories for tests and demos.
//!
//! Commits are described in memory and written with a single `git fast-import`
//! run, so hashes are deterministic for a given script (fixed identities and
//! timestamps) and building a 100-commit repo takes one process.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use tempfile::TempDir;

use crate::gitio::{CommitId, GitError, Repo};

#[derive(Debug, Clone)]
enum Change {
    Write(String, Vec<u8>),
    Delete(String),
    Rename(String, String),
}

#[derive(Debug, Clone)]
struct Planned {
    message: String,
    time: i64,
    changes: Vec<Change>,
    /// Index of the first parent; None means "previous commit on the branch".
    parent: Option<usize>,
    merge: Option<usize>,
}

/// Builds a linear (optionally merging) history commit by commit.
#[derive(Debug, Default, Clone)]
pub struct FixtureBuilder {
    commits: Vec<Planned>,
    tree: BTreeMap<String, Vec<u8>>,
}

pub struct Fixture {
    dir: TempDir,
    pub ids: Vec<CommitId>,
}

impl FixtureBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Content of `path` in the tip of the script so far.
    pub fn current(&self, path: &str) -> Option<&[u8]> {
        self.tree.get(path).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.commits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commits.is_empty()
    }

    /// Adds a commit writing the given files (`None` deletes). Returns its index.
    pub fn commit(&mut self, message: &str, time: i64, files: &[(&str, Option<&str>)]) -> usize {
        let changes = files
            .iter()
            .map(|(p, c)| match c {
                Some(text) => Change::Write(p.to_string(), text.as_bytes().to_vec()),
                None => Change::Delete(p.to_string()),
            })
            .collect();
        self.push(message, time, changes, None)
    }

    /// Adds a commit writing raw bytes (binary content).
    pub fn commit_bytes(&mut self, message: &str, time: i64, path: &str, bytes: &[u8]) -> usize {
        self.push(
            message,
            time,
            vec![Change::Write(path.to_string(), bytes.to_vec())],
            None,
        )
    }

    /// Adds a commit renaming `from` to `to`, optionally also rewriting `to`.
    pub fn rename(
        &mut self,
        message: &str,
        time: i64,
        from: &str,
        to: &str,
        new_content: Option<&str>,
    ) -> usize {
        let mut changes = vec![Change::Rename(from.to_string(), to.to_string())];
        if let Some(c) = new_content {
            changes.push(Change::Write(to.to_string(), c.as_bytes().to_vec()));
        }
        self.push(message, time, changes, None)
    }

    /// Adds a merge of `other` into the previous commit.
    pub fn merge(&mut self, message: &str, time: i64, other: usize, files: &[(&str, &str)]) -> usize {
        let changes = files
            .iter()
            .map(|(p, c)| Change::Write(p.to_string(), c.as_bytes().to_vec()))
            .collect();
        let idx = self.push(message, time, changes, None);
        self.commits[idx].merge = Some(other);
        idx
    }

    /// Adds a commit whose first parent is `parent` rather than the previous commit.
    /// The tracked tree is not rewound; callers write full file contents.
    pub fn commit_on(
        &mut self,
        parent: usize,
        message: &str,
        time: i64,
        files: &[(&str, &str)],
    ) -> usize {
        let changes = files
            .iter()
            .map(|(p, c)| Change::Write(p.to_string(), c.as_bytes().to_vec()))
            .collect();
        self.push(message, time, changes, Some(parent))
    }

    fn push(&mut self, message: &str, time: i64, changes: Vec<Change>, parent: Option<usize>) -> usize {
        for c in &changes {
            match c {
                Change::Write(p, b) => {
                    self.tree.insert(p.clone(), b.clone());
                }
                Change::Delete(p) => {
                    self.tree.remove(p);
                }
                Change::Rename(from, to) => {
                    if let Some(b) = self.tree.remove(from) {
                        self.tree.insert(to.clone(), b);
                    }
                }
            }
        }
        self.commits.push(Planned {
            message: message.to_string(),
            time,
            changes,
            parent,
            merge: None,
        });
        self.commits.len() - 1
    }

    fn stream(&self) -> Vec<u8> {
        let mut s = Vec::new();
        let data = |s: &mut Vec<u8>, bytes: &[u8]| {
            s.extend_from_slice(format!("data {}\n", bytes.len()).as_bytes());
            s.extend_from_slice(bytes);
            s.push(b'\n');
        };
        for (i, c) in self.commits.iter().enumerate() {
            let mark = i + 1;
            s.extend_from_slice(format!("commit refs/heads/main\nmark :{mark}\n").as_bytes());
            s.extend_from_slice(
                format!("author Fixture <fixture@example.com> {} +0000\n", c.time).as_bytes(),
            );
            s.extend_from_slice(
                format!("committer Fixture <fixture@example.com> {} +0000\n", c.time).as_bytes(),
            );
            let mut msg = c.message.clone();
            if !msg.ends_with('\n') {
                msg.push('\n');
            }
            data(&mut s, msg.as_bytes());
            match c.parent {
                Some(p) => s.extend_from_slice(format!("from :{}\n", p + 1).as_bytes()),
                None if i > 0 => s.extend_from_slice(format!("from :{i}\n").as_bytes()),
                None => {}
            }
            if let Some(m) = c.merge {
                s.extend_from_slice(format!("merge :{}\n", m + 1).as_bytes());
            }
            for ch in &c.changes {
                match ch {
                    Change::Write(p, b) => {
                        s.extend_from_slice(format!("M 100644 inline {}\n", quote(p)).as_bytes());
                        data(&mut s, b);
                    }
                    Change::Delete(p) => {
                        s.extend_from_slice(format!("D {}\n", quote(p)).as_bytes());
                    }
                    Change::Rename(a, b) => {
                        s.extend_from_slice(format!("R {} {}\n", quote(a), quote(b)).as_bytes());
                    }
                }
            }
            s.push(b'\n');
        }
        s
    }

    /// Hashes the commits scripted so far would get. Lets a later commit message
    /// reference an earlier commit's hash.
    pub fn preview_ids(&self) -> Result<Vec<CommitId>, GitError> {
        Ok(self.build()?.ids)
    }

    /// Adds a commit with no file changes.
    pub fn empty_commit(&mut self, message: &str, time: i64) -> usize {
        self.push(message, time, Vec::new(), None)
    }

    /// Materializes the repository in a fresh temporary directory.
    pub fn build(&self) -> Result<Fixture, GitError> {
        let dir = tempfile::Builder::new().prefix("szzkit-fixture").tempdir()?;
        self.build_in(dir.path())?;
        let ids = read_marks(dir.path(), self.commits.len())?;
        Ok(Fixture { dir, ids })
    }

    /// Materializes the repository at `path` (created if absent) and returns the ids.
    pub fn build_at(&self, path: &Path) -> Result<Vec<CommitId>, GitError> {
        std::fs::create_dir_all(path)?;
        self.build_in(path)?;
        read_marks(path, self.commits.len())
    }

    fn build_in(&self, path: &Path) -> Result<(), GitError> {
        run(path, &["init", "-q", "--initial-branch=main"], None)?;
        let stream = self.stream();
        run(
            path,
            &["fast-import", "--quiet", "--export-marks=.git/fixture-marks"],
            Some(&stream),
        )?;
        Ok(())
    }
}

fn quote(p: &str) -> String {
    if p.contains([' ', '"', '\n', '\\']) {
        format!("\"{}\"", p.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n"))
    } else {
        p.to_string()
    }
}

fn read_marks(path: &Path, n: usize) -> Result<Vec<CommitId>, GitError> {
    let text = std::fs::read_to_string(path.join(".git/fixture-marks"))?;
    let mut ids = vec![None; n];
    for line in text.lines() {
        let Some((mark, hash)) = line.split_once(' ') else {
            continue;
        };
        let idx: usize = mark
            .trim_start_matches(':')
            .parse()
            .map_err(|_| GitError::Parse(format!("bad mark line {line}")))?;
        if (1..=n).contains(&idx) {
            ids[idx - 1] = Some(CommitId::parse(hash.trim())?);
        }
    }
    ids.into_iter()
        .map(|x| x.ok_or_else(|| GitError::Parse("missing fixture mark".into())))
        .collect()
}

fn run(dir: &Path, args: &[&str], stdin: Option<&[u8]>) -> Result<(), GitError> {
    let mut child = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .env("LC_ALL", "C")
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    if let Some(bytes) = stdin {
        child.stdin.take().expect("piped stdin").write_all(bytes)?;
    }
    let out = child.wait_with_output()?;
    if !out.status.success() {
        return Err(GitError::Command {
            args: args.join(" "),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    Ok(())
}

impl Fixture {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn repo(&self) -> Repo {
        Repo::open(self.path()).expect("fixture repository opens")
    }

    pub fn id(&self, idx: usize) -> &CommitId {
        &self.ids[idx]
    }

    /// Keeps the directory on disk and returns its path.
    pub fn into_path(self) -> std::path::PathBuf {
        self.dir.keep()
    }
}
