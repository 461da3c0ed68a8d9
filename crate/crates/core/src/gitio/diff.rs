//! Unified diff model and a parser for `git diff-tree -p` output.

use serde::{Deserialize, Serialize};

use super::CommitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LineKind {
    Added,
    Removed,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub kind: LineKind,
    pub content: String,
    pub old_lineno: Option<u32>,
    pub new_lineno: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub old_count: u32,
    pub new_start: u32,
    pub new_count: u32,
    /// Function context after the second `@@`, without the leading space.
    pub header: String,
    pub lines: Vec<DiffLine>,
}

impl Hunk {
    /// Renders the `@@ -a,b +c,d @@ header` line.
    pub fn header_line(&self) -> String {
        let mut s = format!(
            "@@ -{},{} +{},{} @@",
            self.old_start, self.old_count, self.new_start, self.new_count
        );
        if !self.header.is_empty() {
            s.push(' ');
            s.push_str(&self.header);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileStatus {
    Modified,
    Added,
    Deleted,
    Renamed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub status: FileStatus,
    pub binary: bool,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    /// The path used for ordering and display: new path, or old path for deletions.
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }

    pub fn removed_count(&self) -> usize {
        self.lines().filter(|l| l.kind == LineKind::Removed).count()
    }

    pub fn added_count(&self) -> usize {
        self.lines().filter(|l| l.kind == LineKind::Added).count()
    }

    pub fn lines(&self) -> impl Iterator<Item = &DiffLine> {
        self.hunks.iter().flat_map(|h| h.lines.iter())
    }

    /// Renders this file as unified diff text (git style headers).
    pub fn render(&self, out: &mut String) {
        let old = self.old_path.as_deref();
        let new = self.new_path.as_deref();
        let a = old.or(new).unwrap_or_default();
        let b = new.or(old).unwrap_or_default();
        out.push_str(&format!("diff --git a/{a} b/{b}\n"));
        match self.status {
            FileStatus::Added => out.push_str("new file\n"),
            FileStatus::Deleted => out.push_str("deleted file\n"),
            FileStatus::Renamed => {
                out.push_str(&format!("rename from {a}\nrename to {b}\n"));
            }
            FileStatus::Modified => {}
        }
        if self.binary {
            out.push_str("Binary files differ\n");
            return;
        }
        if self.hunks.is_empty() {
            return;
        }
        match old {
            Some(p) => out.push_str(&format!("--- a/{p}\n")),
            None => out.push_str("--- /dev/null\n"),
        }
        match new {
            Some(p) => out.push_str(&format!("+++ b/{p}\n")),
            None => out.push_str("+++ /dev/null\n"),
        }
        for hunk in &self.hunks {
            out.push_str(&hunk.header_line());
            out.push('\n');
            for line in &hunk.lines {
                out.push(match line.kind {
                    LineKind::Added => '+',
                    LineKind::Removed => '-',
                    LineKind::Context => ' ',
                });
                out.push_str(&line.content);
                out.push('\n');
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitDiff {
    pub commit: CommitId,
    pub files: Vec<FileDiff>,
    pub context_width: u32,
}

impl CommitDiff {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            f.render(&mut out);
        }
        out
    }

    pub fn removed_count(&self) -> usize {
        self.files
            .iter()
            .filter(|f| !f.binary)
            .map(FileDiff::removed_count)
            .sum()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("malformed diff at line {line}: {reason}")]
pub struct DiffParseError {
    pub line: usize,
    pub reason: String,
}

/// Parses the patch output of `git diff-tree -p` (or `git diff`) into file diffs.
///
/// Hunk bodies are consumed by their declared line counts, so content lines that
/// happen to look like headers (`--- a/x` removed as `-- a/x`) never confuse the parser.
pub fn parse_unified(raw: &[u8]) -> Result<Vec<FileDiff>, DiffParseError> {
    let mut lines: Vec<&[u8]> = raw.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }

    let mut files = Vec::new();
    let mut current: Option<FileDiff> = None;
    let mut header_paths: Option<(String, String)> = None;
    let mut i = 0;

    while i < lines.len() {
        let line = String::from_utf8_lossy(lines[i]);
        if let Some(rest) = line.strip_prefix("diff --git ") {
            if let Some(f) = current.take() {
                files.push(finish_file(f, header_paths.take()));
            }
            header_paths = split_git_header(rest);
            current = Some(FileDiff {
                old_path: None,
                new_path: None,
                status: FileStatus::Modified,
                binary: false,
                hunks: Vec::new(),
            });
            i += 1;
            continue;
        }
        let Some(file) = current.as_mut() else {
            // Anything before the first file header (commit ids, blank lines) is ignored.
            i += 1;
            continue;
        };
        if line.starts_with("new file mode") {
            file.status = FileStatus::Added;
        } else if line.starts_with("deleted file mode") {
            file.status = FileStatus::Deleted;
        } else if let Some(p) = line.strip_prefix("rename from ") {
            file.status = FileStatus::Renamed;
            file.old_path = Some(unquote(p));
        } else if let Some(p) = line.strip_prefix("rename to ") {
            file.status = FileStatus::Renamed;
            file.new_path = Some(unquote(p));
        } else if let Some(p) = line.strip_prefix("--- ") {
            if let Some(path) = strip_side(p, "a/") {
                file.old_path = Some(path);
            }
        } else if let Some(p) = line.strip_prefix("+++ ") {
            if let Some(path) = strip_side(p, "b/") {
                file.new_path = Some(path);
            }
        } else if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
            file.binary = true;
        } else if line.starts_with("@@ ") {
            let (hunk, consumed) = parse_hunk(&lines, i)?;
            file.hunks.push(hunk);
            i += consumed;
            continue;
        }
        i += 1;
    }
    if let Some(f) = current.take() {
        files.push(finish_file(f, header_paths.take()));
    }
    Ok(files)
}

fn finish_file(mut f: FileDiff, header: Option<(String, String)>) -> FileDiff {
    if let Some((a, b)) = header {
        match f.status {
            FileStatus::Added => {
                f.new_path.get_or_insert(b);
            }
            FileStatus::Deleted => {
                f.old_path.get_or_insert(a);
            }
            _ => {
                f.old_path.get_or_insert(a);
                f.new_path.get_or_insert(b);
            }
        }
    }
    match f.status {
        FileStatus::Added => f.old_path = None,
        FileStatus::Deleted => f.new_path = None,
        _ => {}
    }
    f
}

/// `a/x b/x` with identical sides; ambiguous headers (renames with spaces) yield None
/// and the paths come from the `rename`/`---`/`+++` lines instead.
fn split_git_header(rest: &str) -> Option<(String, String)> {
    if rest.starts_with('"') {
        let (a, tail) = take_quoted(rest)?;
        let b = tail.trim_start();
        let b = if b.starts_with('"') {
            take_quoted(b)?.0
        } else {
            b.to_string()
        };
        return Some((a.strip_prefix("a/")?.into(), b.strip_prefix("b/")?.into()));
    }
    let body = rest.strip_prefix("a/")?;
    // Both halves have the same length when old and new paths are equal.
    let n = body.len();
    if n < 3 || (n - 3) % 2 != 0 {
        return None;
    }
    let half = (n - 3) / 2;
    let (a, tail) = body.split_at(half);
    let b = tail.strip_prefix(" b/")?;
    if a == b {
        Some((a.to_string(), b.to_string()))
    } else {
        None
    }
}

fn strip_side(p: &str, prefix: &str) -> Option<String> {
    let p = p.trim_end_matches('\t');
    if p == "/dev/null" {
        return None;
    }
    let p = if p.starts_with('"') { unquote(p) } else { p.to_string() };
    Some(p.strip_prefix(prefix).map(str::to_string).unwrap_or(p))
}

fn take_quoted(s: &str) -> Option<(String, &str)> {
    let bytes = s.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return Some((unquote(&s[..=i]), &s[i + 1..])),
            _ => i += 1,
        }
    }
    None
}

/// Undoes git's C-style path quoting (`core.quotePath` escapes, octal bytes).
pub(crate) fn unquote(s: &str) -> String {
    let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) else {
        return s.to_string();
    };
    let bytes = inner.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' || i + 1 == bytes.len() {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        let c = bytes[i + 1];
        i += 2;
        match c {
            b'n' => out.push(b'\n'),
            b't' => out.push(b'\t'),
            b'r' => out.push(b'\r'),
            b'a' => out.push(7),
            b'b' => out.push(8),
            b'f' => out.push(12),
            b'v' => out.push(11),
            b'0'..=b'7' => {
                let mut v = u32::from(c - b'0');
                let mut k = 0;
                while k < 2 && i < bytes.len() && (b'0'..=b'7').contains(&bytes[i]) {
                    v = v * 8 + u32::from(bytes[i] - b'0');
                    i += 1;
                    k += 1;
                }
                out.push(v as u8);
            }
            other => out.push(other),
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    match s.split_once(',') {
        Some((start, count)) => Some((start.parse().ok()?, count.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk(lines: &[&[u8]], at: usize) -> Result<(Hunk, usize), DiffParseError> {
    let err = |reason: &str| DiffParseError {
        line: at + 1,
        reason: reason.to_string(),
    };
    let head = String::from_utf8_lossy(lines[at]);
    let body = head.strip_prefix("@@ ").ok_or_else(|| err("missing @@"))?;
    let (ranges, header) = body.split_once(" @@").ok_or_else(|| err("unterminated @@"))?;
    let (old, new) = ranges.split_once(' ').ok_or_else(|| err("missing ranges"))?;
    let (old_start, old_count) = old
        .strip_prefix('-')
        .and_then(parse_range)
        .ok_or_else(|| err("bad old range"))?;
    let (new_start, new_count) = new
        .strip_prefix('+')
        .and_then(parse_range)
        .ok_or_else(|| err("bad new range"))?;

    let mut hunk = Hunk {
        old_start,
        old_count,
        new_start,
        new_count,
        header: header.strip_prefix(' ').unwrap_or(header).to_string(),
        lines: Vec::new(),
    };
    let (mut old_left, mut new_left) = (old_count, new_count);
    let (mut old_no, mut new_no) = (old_start, new_start);
    let mut i = at + 1;
    while old_left > 0 || new_left > 0 {
        let Some(raw) = lines.get(i) else {
            return Err(err("hunk truncated"));
        };
        i += 1;
        let (tag, rest): (u8, &[u8]) = match raw.split_first() {
            Some((t, r)) => (*t, r),
            None => (b' ', raw),
        };
        let content = String::from_utf8_lossy(rest).into_owned();
        match tag {
            b' ' => {
                if old_left == 0 || new_left == 0 {
                    return Err(err("context line exceeds hunk counts"));
                }
                hunk.lines.push(DiffLine {
                    kind: LineKind::Context,
                    content,
                    old_lineno: Some(old_no),
                    new_lineno: Some(new_no),
                });
                old_no += 1;
                new_no += 1;
                old_left -= 1;
                new_left -= 1;
            }
            b'-' => {
                if old_left == 0 {
                    return Err(err("removed line exceeds hunk counts"));
                }
                hunk.lines.push(DiffLine {
                    kind: LineKind::Removed,
                    content,
                    old_lineno: Some(old_no),
                    new_lineno: None,
                });
                old_no += 1;
                old_left -= 1;
            }
            b'+' => {
                if new_left == 0 {
                    return Err(err("added line exceeds hunk counts"));
                }
                hunk.lines.push(DiffLine {
                    kind: LineKind::Added,
                    content,
                    old_lineno: None,
                    new_lineno: Some(new_no),
                });
                new_no += 1;
                new_left -= 1;
            }
            b'\\' => {}
            _ => return Err(err("unexpected line inside hunk")),
        }
    }
    // A trailing "\ No newline at end of file" belongs to this hunk.
    while lines.get(i).is_some_and(|l| l.starts_with(b"\\")) {
        i += 1;
    }
    Ok((hunk, i - at))
}
