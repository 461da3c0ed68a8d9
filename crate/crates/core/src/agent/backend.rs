//! Chat backends: the trait the session loop talks to, a deterministic scripted
//! double, and an HTTP client for OpenAI-style chat-completion endpoints.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::types::{Message, Role, TokenUsage, ToolCall};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying (rate limits, 5xx, timeouts).
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
    #[error("script exhausted after {0} turns")]
    ScriptExhausted(usize),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

/// JSON-schema description of one tool, as sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub message: Message,
    pub usage: TokenUsage,
}

pub trait Backend: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, messages: &[Message], tools: &[ToolSpec]) -> Result<ChatReply, BackendError>;
}

/// One canned assistant turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTurn {
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub tool_calls: Vec<ScriptToolCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    #[serde(default)]
    pub id: Option<String>,
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

impl ScriptTurn {
    pub fn text(content: impl Into<String>) -> Self {
        ScriptTurn {
            content: content.into(),
            tool_calls: Vec::new(),
        }
    }

    pub fn tool(name: &str, arguments: Value) -> Self {
        ScriptTurn {
            content: String::new(),
            tool_calls: vec![ScriptToolCall {
                id: None,
                name: name.to_string(),
                arguments,
            }],
        }
    }
}

/// Replays canned turns in order, ignoring its input. Usage per turn is a constant.
#[derive(Debug)]
pub struct ScriptedBackend {
    model: String,
    turns: Vec<ScriptTurn>,
    usage: TokenUsage,
    next: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(turns: Vec<ScriptTurn>) -> Self {
        Self::with_usage(turns, TokenUsage::default())
    }

    pub fn with_usage(turns: Vec<ScriptTurn>, usage: TokenUsage) -> Self {
        ScriptedBackend {
            model: "scripted".to_string(),
            turns,
            usage,
            next: Mutex::new(0),
        }
    }

    pub fn named(mut self, model: &str) -> Self {
        self.model = model.to_string();
        self
    }

    pub fn consumed(&self) -> usize {
        *self.next.lock().unwrap()
    }

    pub fn remaining(&self) -> usize {
        self.turns.len() - self.consumed()
    }
}

impl Backend for ScriptedBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, _messages: &[Message], _tools: &[ToolSpec]) -> Result<ChatReply, BackendError> {
        let mut next = self.next.lock().unwrap();
        let turn_no = *next;
        let turn = self
            .turns
            .get(turn_no)
            .ok_or(BackendError::ScriptExhausted(self.turns.len()))?;
        *next += 1;
        let tool_calls = turn
            .tool_calls
            .iter()
            .enumerate()
            .map(|(k, c)| ToolCall {
                id: c.id.clone().unwrap_or_else(|| format!("call_{turn_no}_{k}")),
                name: c.name.clone(),
                arguments: c.arguments.clone(),
            })
            .collect();
        Ok(ChatReply {
            message: Message {
                role: Role::Assistant,
                content: turn.content.clone(),
                tool_calls,
                tool_call_id: None,
            },
            usage: self.usage,
        })
    }
}

/// Script file for the scripted backend: default turns plus optional per-fix
/// overrides keyed by fix hash (or a unique prefix of it).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default = "default_script_model")]
    pub model: String,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default)]
    pub turns: Vec<ScriptTurn>,
    #[serde(default)]
    pub by_fix: BTreeMap<String, Vec<ScriptTurn>>,
}

fn default_script_model() -> String {
    "scripted".to_string()
}

impl ScriptFile {
    pub fn backend_for(&self, fix: &str) -> ScriptedBackend {
        let turns = self
            .by_fix
            .iter()
            .find(|(k, _)| !k.is_empty() && fix.starts_with(k.as_str()))
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| self.turns.clone());
        ScriptedBackend::with_usage(turns, self.usage).named(&self.model)
    }
}

/// Test double answering through a closure over the transcript.
pub struct FnBackend<F> {
    model: String,
    usage: TokenUsage,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&[Message]) -> Result<Message, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend {
            model: "fn".to_string(),
            usage: TokenUsage::default(),
            f,
        }
    }

    pub fn with_usage(mut self, usage: TokenUsage) -> Self {
        self.usage = usage;
        self
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&[Message]) -> Result<Message, BackendError> + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[Message], _tools: &[ToolSpec]) -> Result<ChatReply, BackendError> {
        Ok(ChatReply {
            message: (self.f)(messages)?,
            usage: self.usage,
        })
    }
}

/// Client for an OpenAI-style `/chat/completions` endpoint with function tools.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    /// The key is read from `api_key_env` now; it is never serialized anywhere.
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key_env: Option<&str>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let api_key = api_key_env.and_then(|v| std::env::var(v).ok()).filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }

    pub fn request_body(&self, messages: &[Message], tools: &[ToolSpec]) -> Value {
        let msgs: Vec<Value> = messages.iter().map(wire_message).collect();
        let mut body = json!({ "model": self.model, "messages": msgs });
        if !tools.is_empty() {
            body["tools"] = tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": t.name,
                            "description": t.description,
                            "parameters": t.parameters,
                        }
                    })
                })
                .collect();
        }
        body
    }
}

fn wire_message(m: &Message) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut v = json!({ "role": role, "content": m.content });
    if !m.tool_calls.is_empty() {
        v["tool_calls"] = m
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": { "name": c.name, "arguments": c.arguments.to_string() },
                })
            })
            .collect();
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

/// Parses a chat-completion response body into an assistant message and usage.
pub fn parse_completion(body: &Value) -> Result<ChatReply, BackendError> {
    let msg = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Fatal("response has no choices[0].message".into()))?;
    let content = msg
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for (k, c) in calls.iter().enumerate() {
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let raw_args = c.pointer("/function/arguments");
            let arguments = match raw_args {
                Some(Value::String(s)) => {
                    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone()))
                }
                Some(v) => v.clone(),
                None => Value::Null,
            };
            let id = c
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{k}"));
            tool_calls.push(ToolCall { id, name, arguments });
        }
    }
    let u = |p: &str| body.pointer(p).and_then(Value::as_u64).unwrap_or(0);
    let cached = u("/usage/prompt_tokens_details/cached_tokens");
    let usage = TokenUsage {
        input_tokens: u("/usage/prompt_tokens").saturating_sub(cached),
        output_tokens: u("/usage/completion_tokens"),
        cache_tokens: cached,
    };
    Ok(ChatReply {
        message: Message {
            role: Role::Assistant,
            content,
            tool_calls,
            tool_call_id: None,
        },
        usage,
    })
}

impl Backend for HttpBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[Message], tools: &[ToolSpec]) -> Result<ChatReply, BackendError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&self.request_body(messages, tools));
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                BackendError::Transient(e.to_string())
            } else {
                BackendError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("HTTP {status}")));
        }
        let body: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(e.to_string()))?;
        parse_completion(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_then_exhausts() {
        let b = ScriptedBackend::new(vec![ScriptTurn::text("done")]);
        let r = b.complete(&[], &[]).unwrap();
        assert_eq!(r.message.content, "done");
        assert_eq!(b.consumed(), 1);
        assert_eq!(b.complete(&[], &[]).unwrap_err(), BackendError::ScriptExhausted(1));
    }

    #[test]
    fn script_file_per_fix_override() {
        let s: ScriptFile = serde_json::from_value(json!({
            "usage": {"input_tokens": 100, "output_tokens": 10, "cache_tokens": 0},
            "turns": [{"content": "default"}],
            "by_fix": {"abc123": [{"content": "special"}]}
        }))
        .unwrap();
        let b = s.backend_for("abc1234567");
        assert_eq!(b.complete(&[], &[]).unwrap().message.content, "special");
        let b = s.backend_for("ffff");
        let r = b.complete(&[], &[]).unwrap();
        assert_eq!(r.message.content, "default");
        assert_eq!(r.usage.input_tokens, 100);
    }

    #[test]
    fn completion_parsing() {
        let body = json!({
            "choices": [{"message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{"id": "c1", "type": "function",
                    "function": {"name": "Grep", "arguments": "{\"pattern\":\"fsleep\"}"}}]
            }}],
            "usage": {"prompt_tokens": 120, "completion_tokens": 7,
                      "prompt_tokens_details": {"cached_tokens": 20}}
        });
        let r = parse_completion(&body).unwrap();
        assert_eq!(r.message.tool_calls[0].arguments["pattern"], "fsleep");
        assert_eq!(r.usage.input_tokens, 100);
        assert_eq!(r.usage.cache_tokens, 20);
        assert_eq!(r.usage.output_tokens, 7);
    }

    #[test]
    fn request_body_shape() {
        let b = HttpBackend::new("http://localhost:1/v1/chat/completions", "m", None, Duration::from_secs(1))
            .unwrap();
        let mut a = Message::assistant("");
        a.tool_calls.push(ToolCall {
            id: "c1".into(),
            name: "Read".into(),
            arguments: json!({"path": "INDEX.txt"}),
        });
        let msgs = vec![Message::user("hi"), a, Message::tool("c1", "ok")];
        let tools = vec![ToolSpec {
            name: "Read".into(),
            description: "read".into(),
            parameters: json!({"type": "object"}),
        }];
        let body = b.request_body(&msgs, &tools);
        assert_eq!(body["messages"][1]["tool_calls"][0]["function"]["arguments"], "{\"path\":\"INDEX.txt\"}");
        assert_eq!(body["messages"][2]["tool_call_id"], "c1");
        assert_eq!(body["tools"][0]["function"]["name"], "Read");
    }
}
