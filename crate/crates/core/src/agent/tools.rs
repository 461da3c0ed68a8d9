//! Workspace-confined Read, Grep, Glob and Write.
//!
//! Every path argument is resolved lexically against the workspace root and then
//! checked again after symlink resolution; nothing outside the root is ever
//! opened.

use std::fs;
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};

use globset::GlobBuilder;
use regex::RegexBuilder;
use serde_json::{json, Value};
use walkdir::WalkDir;

use super::backend::ToolSpec;
use super::types::ToolKind;

pub const DEFAULT_MAX_MATCHES: usize = 200;
pub const DEFAULT_READ_LIMIT: usize = 2000;
const MAX_LINE_CHARS: usize = 2000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("path {0:?} is outside the workspace")]
    OutsideWorkspace(String),
    #[error("{0}: no such file")]
    NotFound(String),
    #[error("invalid regex: {0}")]
    BadRegex(String),
    #[error("invalid arguments: {0}")]
    BadArgs(String),
    #[error("unknown tool {0:?}; available tools: Read, Grep, Glob, Write")]
    UnknownTool(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ToolError {
    fn from(e: std::io::Error) -> Self {
        ToolError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrepMode {
    Literal,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrepMatch {
    pub path: String,
    pub line_no: usize,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GrepOutput {
    pub matches: Vec<GrepMatch>,
    pub truncated: bool,
}

impl GrepOutput {
    pub fn render(&self) -> String {
        if self.matches.is_empty() {
            return "No matches found.".to_string();
        }
        let mut s = String::new();
        for m in &self.matches {
            s.push_str(&format!("{}:{}:{}\n", m.path, m.line_no, m.line));
        }
        if self.truncated {
            s.push_str(&format!("[truncated: showing first {} matches]\n", self.matches.len()));
        }
        s
    }
}

/// Resolves `rel` inside `root`, rejecting anything that would escape it.
pub fn resolve(root: &Path, rel: &str) -> Result<PathBuf, ToolError> {
    let outside = || ToolError::OutsideWorkspace(rel.to_string());
    let canon_root = root.canonicalize()?;
    let candidate = Path::new(rel);
    let relative: PathBuf = if candidate.is_absolute() {
        candidate
            .strip_prefix(&canon_root)
            .or_else(|_| candidate.strip_prefix(root))
            .map_err(|_| outside())?
            .to_path_buf()
    } else {
        candidate.to_path_buf()
    };
    let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
    for c in relative.components() {
        match c {
            Component::Normal(p) => parts.push(p),
            Component::CurDir => {}
            Component::ParentDir => {
                parts.pop().ok_or_else(outside)?;
            }
            Component::RootDir | Component::Prefix(_) => return Err(outside()),
        }
    }
    let mut path = canon_root.clone();
    path.extend(parts);
    // Symlinks: the deepest existing ancestor must still be inside the root.
    let mut probe = path.as_path();
    loop {
        if probe.exists() {
            let real = probe.canonicalize()?;
            if !real.starts_with(&canon_root) {
                return Err(outside());
            }
            break;
        }
        match probe.parent() {
            Some(p) => probe = p,
            None => return Err(outside()),
        }
    }
    if path.is_symlink() {
        let real = path.canonicalize().map_err(|_| outside())?;
        if !real.starts_with(&canon_root) {
            return Err(outside());
        }
    }
    Ok(path)
}

fn relative_name(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Regular files under the workspace, as sorted `/`-separated relative paths.
fn workspace_files(root: &Path) -> Result<Vec<(String, PathBuf)>, ToolError> {
    let canon = root.canonicalize()?;
    let mut files = Vec::new();
    for entry in WalkDir::new(&canon).follow_links(false) {
        let entry = entry.map_err(|e| ToolError::Io(e.to_string()))?;
        if entry.file_type().is_file() {
            files.push((relative_name(&canon, entry.path()), entry.into_path()));
        }
    }
    files.sort();
    Ok(files)
}

pub fn tool_grep(
    root: &Path,
    pattern: &str,
    mode: GrepMode,
    ignore_case: bool,
    max_matches: usize,
) -> Result<GrepOutput, ToolError> {
    if pattern.is_empty() {
        return Err(ToolError::BadArgs("empty pattern".into()));
    }
    let source = match mode {
        GrepMode::Literal => regex::escape(pattern),
        GrepMode::Regex => pattern.to_string(),
    };
    let re = RegexBuilder::new(&source)
        .case_insensitive(ignore_case)
        .build()
        .map_err(|e| ToolError::BadRegex(e.to_string()))?;
    let mut out = GrepOutput::default();
    for (name, path) in workspace_files(root)? {
        let bytes = fs::read(&path)?;
        let text = String::from_utf8_lossy(&bytes);
        for (i, line) in text.lines().enumerate() {
            if re.is_match(line) {
                if out.matches.len() == max_matches {
                    out.truncated = true;
                    return Ok(out);
                }
                out.matches.push(GrepMatch {
                    path: name.clone(),
                    line_no: i + 1,
                    line: clip_line(line),
                });
            }
        }
    }
    Ok(out)
}

fn clip_line(line: &str) -> String {
    if line.chars().count() <= MAX_LINE_CHARS {
        line.to_string()
    } else {
        let mut s: String = line.chars().take(MAX_LINE_CHARS).collect();
        s.push_str(" [line truncated]");
        s
    }
}

/// Numbered lines starting at 1-based `offset`. Past the end yields an EOF marker.
pub fn tool_read(
    root: &Path,
    rel: &str,
    offset: Option<usize>,
    limit: Option<usize>,
) -> Result<String, ToolError> {
    let path = resolve(root, rel)?;
    if !path.is_file() {
        return Err(ToolError::NotFound(rel.to_string()));
    }
    let bytes = fs::read(&path)?;
    let text = String::from_utf8_lossy(&bytes);
    let lines: Vec<&str> = text.lines().collect();
    let start = offset.unwrap_or(1).max(1);
    let limit = limit.unwrap_or(DEFAULT_READ_LIMIT);
    if start > lines.len() {
        return Ok(format!("[EOF: file has {} lines]\n", lines.len()));
    }
    let mut out = String::new();
    let end = (start - 1 + limit).min(lines.len());
    for (i, line) in lines[start - 1..end].iter().enumerate() {
        out.push_str(&format!("{:>6}\t{}\n", start + i, clip_line(line)));
    }
    if end < lines.len() {
        out.push_str(&format!(
            "[{} more lines; continue with offset {}]\n",
            lines.len() - end,
            end + 1
        ));
    }
    Ok(out)
}

pub fn tool_glob(root: &Path, pattern: &str) -> Result<Vec<String>, ToolError> {
    if pattern.is_empty() {
        return Err(ToolError::BadArgs("empty pattern".into()));
    }
    let glob = GlobBuilder::new(pattern.trim_start_matches("./"))
        .literal_separator(true)
        .build()
        .map_err(|e| ToolError::BadArgs(e.to_string()))?
        .compile_matcher();
    Ok(workspace_files(root)?
        .into_iter()
        .map(|(name, _)| name)
        .filter(|name| glob.is_match(name))
        .collect())
}

/// Creates or replaces a file atomically (temp file in the same directory, then rename).
pub fn tool_write(root: &Path, rel: &str, content: &str) -> Result<(), ToolError> {
    let path = resolve(root, rel)?;
    if path.is_dir() {
        return Err(ToolError::BadArgs(format!("{rel} is a directory")));
    }
    let dir = path
        .parent()
        .ok_or_else(|| ToolError::OutsideWorkspace(rel.to_string()))?;
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.persist(&path).map_err(|e| ToolError::Io(e.to_string()))?;
    Ok(())
}

fn arg_str<'a>(args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::BadArgs(format!("missing string argument {key:?}")))
}

fn arg_usize(args: &Value, key: &str) -> Option<usize> {
    args.get(key).and_then(Value::as_u64).map(|v| v as usize)
}

/// Runs one tool call and returns the text shown to the model.
pub fn dispatch(root: &Path, tool: ToolKind, args: &Value) -> Result<String, ToolError> {
    match tool {
        ToolKind::Read => tool_read(
            root,
            arg_str(args, "path")?,
            arg_usize(args, "offset"),
            arg_usize(args, "limit"),
        ),
        ToolKind::Grep => {
            let mode = match args.get("mode").and_then(Value::as_str).unwrap_or("regex") {
                m if m.eq_ignore_ascii_case("literal") => GrepMode::Literal,
                m if m.eq_ignore_ascii_case("regex") => GrepMode::Regex,
                other => return Err(ToolError::BadArgs(format!("unknown grep mode {other:?}"))),
            };
            let ignore_case = args
                .get("ignore_case")
                .and_then(Value::as_bool)
                .unwrap_or(false);
            let max = arg_usize(args, "max_matches").unwrap_or(DEFAULT_MAX_MATCHES);
            Ok(tool_grep(root, arg_str(args, "pattern")?, mode, ignore_case, max)?.render())
        }
        ToolKind::Glob => {
            let paths = tool_glob(root, arg_str(args, "pattern")?)?;
            if paths.is_empty() {
                Ok("No files matched.".to_string())
            } else {
                Ok(paths.join("\n") + "\n")
            }
        }
        ToolKind::Write => {
            let path = arg_str(args, "path")?;
            tool_write(root, path, arg_str(args, "content")?)?;
            Ok(format!("Wrote {path}"))
        }
    }
}

/// Wire descriptions of the four tools.
pub fn tool_specs() -> Vec<ToolSpec> {
    vec![
        ToolSpec {
            name: "Read".into(),
            description: "Read a file from the workspace. Lines are returned numbered from 1. \
                          Use offset (1-based line) and limit to page through large files."
                .into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "path": {"type": "string", "description": "Path relative to the workspace"},
                    "offset": {"type": "integer", "minimum": 1},
                    "limit": {"type": "integer", "minimum": 1}
                },
                "required": ["path"]
            }),
        },
        ToolSpec {
            name: "Grep".into(),
            description: "Search all workspace files for a pattern. Returns path:line:text \
                          for each matching line."
                .into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "pattern": {"type": "string"},
                    "mode": {"type": "string", "enum": ["literal", "regex"], "default": "regex"},
                    "ignore_case": {"type": "boolean", "default": false},
                    "max_matches": {"type": "integer", "minimum": 1}
                },
                "required": ["pattern"]
            }),
        },
        ToolSpec {
            name: "Glob".into(),
            description: "List workspace files matching a glob pattern such as *.txt.".into(),
            parameters: json!({
                "type": "object",
                "properties": {"pattern": {"type": "string"}},
                "required": ["pattern"]
            }),
        },
        ToolSpec {
            name: "Write".into(),
            description: "Create or overwrite a file in the workspace.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "path": {"type": "string"},
                    "content": {"type": "string"}
                },
                "required": ["path", "content"]
            }),
        },
    ]
}
