use std::path::Path;
use std::time::{Duration, Instant};

use super::backend::{Backend, BackendError, ChatReply};
use super::price::PriceTable;
use super::tools::{dispatch, tool_specs, ToolError};
use super::types::{
    Message, SessionBudget, SessionResult, StopReason, TokenUsage, ToolCallRecord, ToolKind,
};

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub budget: SessionBudget,
    /// Total attempts per backend call for transient failures.
    pub retry_attempts: u32,
    pub retry_base: Duration,
    /// When false, `wall_ms` is recorded as 0 so traces are reproducible.
    pub record_timing: bool,
    pub prices: PriceTable,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            budget: SessionBudget::default(),
            retry_attempts: 3,
            retry_base: Duration::from_millis(500),
            record_timing: true,
            prices: PriceTable::default(),
        }
    }
}

fn complete_with_retry(
    backend: &dyn Backend,
    transcript: &[Message],
    opts: &SessionOptions,
) -> Result<ChatReply, BackendError> {
    let specs = tool_specs();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.complete(transcript, &specs) {
            Err(e) if e.is_transient() && attempt < opts.retry_attempts.max(1) => {
                let delay = opts.retry_base * 2u32.pow(attempt - 1);
                log::warn!("backend attempt {attempt} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
            }
            other => return other,
        }
    }
}

fn truncate_result(mut text: String, max: usize) -> String {
    if text.len() <= max {
        return text;
    }
    let mut cut = max;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    let omitted = text.len() - cut;
    text.truncate(cut);
    text.push_str(&format!("\n[truncated: {omitted} bytes omitted]\n"));
    text
}

/// Runs one agent session: the backend is called turn by turn, tool calls are
/// executed inside `workspace`, and the loop ends on a plain-text reply, an
/// exhausted budget, or a backend failure.
pub fn run_session(
    backend: &dyn Backend,
    system_prompt: &str,
    user_prompt: &str,
    workspace: &Path,
    opts: &SessionOptions,
) -> SessionResult {
    let mut transcript = vec![Message::system(system_prompt), Message::user(user_prompt)];
    let mut trace: Vec<ToolCallRecord> = Vec::new();
    let mut tokens = TokenUsage::default();
    let mut turns = 0u32;
    let budget = opts.budget;

    let (stopped_by, final_text, error) = loop {
        if turns >= budget.max_turns {
            break (StopReason::Budget, String::new(), Some("turn limit reached".to_string()));
        }
        if tokens.total() >= budget.max_total_tokens {
            break (StopReason::Budget, String::new(), Some("token limit reached".to_string()));
        }
        let reply = match complete_with_retry(backend, &transcript, opts) {
            Ok(r) => r,
            Err(e) => break (StopReason::BackendError, String::new(), Some(e.to_string())),
        };
        turns += 1;
        tokens += reply.usage;
        let msg = reply.message;
        transcript.push(msg.clone());

        if msg.tool_calls.is_empty() {
            if msg.content.trim().is_empty() {
                break (
                    StopReason::BackendError,
                    String::new(),
                    Some("empty assistant reply".to_string()),
                );
            }
            break (StopReason::Final, msg.content, None);
        }

        for call in &msg.tool_calls {
            let Some(kind) = ToolKind::from_wire(&call.name) else {
                let err = ToolError::UnknownTool(call.name.clone());
                transcript.push(Message::tool(&call.id, format!("Error: {err}")));
                continue;
            };
            let started = Instant::now();
            let outcome = dispatch(workspace, kind, &call.arguments);
            let ok = outcome.is_ok();
            let text = match outcome {
                Ok(t) => t,
                Err(e) => format!("Error: {e}"),
            };
            let text = truncate_result(text, budget.max_tool_result_bytes);
            let wall_ms = if opts.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            };
            trace.push(ToolCallRecord {
                seq: trace.len() as u32 + 1,
                tool: kind,
                args: call.arguments.clone(),
                result_bytes: text.len() as u64,
                ok,
                wall_ms,
            });
            transcript.push(Message::tool(&call.id, text));
        }
    };

    SessionResult {
        final_text,
        trace,
        transcript,
        usage: opts.prices.ledger(backend.model(), &tokens),
        stopped_by,
        turns,
        error,
    }
}
