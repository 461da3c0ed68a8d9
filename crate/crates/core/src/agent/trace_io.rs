//! `trace.v1`: one JSONL file per session.
//!
//! ```text
//! {"schema":"trace.v1","type":"session", session metadata...}
//! {"type":"message", "index":0, "role":..., "content":..., ...}   (one per transcript entry)
//! {"type":"tool_call", "seq":1, "tool":"GREP", "args":{...}, ...}   (one per dispatched call)
//! {"type":"result", "final_text":..., "stopped_by":..., "usage":{...}, "turns":n}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{Message, SessionResult, StopReason, ToolCallRecord, UsageLedger};
use crate::gitio::CommitId;

pub const TRACE_SCHEMA: &str = "trace.v1";

/// A session plus what it was run for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub session_id: String,
    pub fix: Option<CommitId>,
    pub pipeline: String,
    /// Which step produced the session (`stage1`, `file_analysis`, `commit_identifier`, `simple`).
    pub role: String,
    pub candidate_count: Option<usize>,
    pub model: String,
    pub result: SessionResult,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Session {
        schema: String,
        session_id: String,
        fix: Option<CommitId>,
        pipeline: String,
        role: String,
        candidate_count: Option<usize>,
        model: String,
    },
    Message {
        index: usize,
        #[serde(flatten)]
        message: Message,
    },
    ToolCall(ToolCallRecord),
    Result {
        final_text: String,
        stopped_by: StopReason,
        usage: UsageLedger,
        turns: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SessionTrace {
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Session {
            schema: TRACE_SCHEMA.to_string(),
            session_id: self.session_id.clone(),
            fix: self.fix.clone(),
            pipeline: self.pipeline.clone(),
            role: self.role.clone(),
            candidate_count: self.candidate_count,
            model: self.model.clone(),
        }];
        lines.extend(
            self.result
                .transcript
                .iter()
                .enumerate()
                .map(|(index, m)| Line::Message {
                    index,
                    message: m.clone(),
                }),
        );
        lines.extend(self.result.trace.iter().cloned().map(Line::ToolCall));
        lines.push(Line::Result {
            final_text: self.result.final_text.clone(),
            stopped_by: self.result.stopped_by,
            usage: self.result.usage,
            turns: self.result.turns,
            error: self.result.error.clone(),
        });
        let mut out = String::new();
        for l in &lines {
            out.push_str(&serde_json::to_string(l).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, TraceError> {
        let name = path.display().to_string();
        let err = |line: usize, reason: String| TraceError::Parse {
            path: name.clone(),
            line,
            reason,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut header = None;
        let mut transcript = Vec::new();
        let mut trace = Vec::new();
        let mut result = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
            match parsed {
                Line::Session {
                    schema,
                    session_id,
                    fix,
                    pipeline,
                    role,
                    candidate_count,
                    model,
                } => {
                    if schema != TRACE_SCHEMA {
                        return Err(err(i + 1, format!("unsupported schema {schema:?}")));
                    }
                    header = Some((session_id, fix, pipeline, role, candidate_count, model));
                }
                Line::Message { message, .. } => transcript.push(message),
                Line::ToolCall(r) => trace.push(r),
                Line::Result {
                    final_text,
                    stopped_by,
                    usage,
                    turns,
                    error,
                } => result = Some((final_text, stopped_by, usage, turns, error)),
            }
        }
        let (session_id, fix, pipeline, role, candidate_count, model) =
            header.ok_or_else(|| err(1, "missing session header".into()))?;
        let (final_text, stopped_by, usage, turns, error) =
            result.ok_or_else(|| err(0, "missing result line".into()))?;
        Ok(SessionTrace {
            session_id,
            fix,
            pipeline,
            role,
            candidate_count,
            model,
            result: SessionResult {
                final_text,
                trace,
                transcript,
                usage,
                stopped_by,
                turns,
                error,
            },
        })
    }
}

/// Reads every `*.jsonl` trace in a directory, sorted by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<SessionTrace>, TraceError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| SessionTrace::read(p)).collect()
}
