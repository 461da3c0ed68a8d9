//! A small tool-calling agent loop. The toolset is fixed to Read, Grep, Glob and
//! Write over a per-session workspace directory; any other tool name the model
//! asks for is answered with an error and never executed.

mod backend;
mod price;
mod session;
pub mod tools;
mod trace_io;
mod types;

pub use backend::{
    parse_completion, Backend, BackendError, ChatReply, FnBackend, HttpBackend, ScriptFile,
    ScriptToolCall, ScriptTurn, ScriptedBackend, ToolSpec,
};
pub use price::{ModelPrice, PriceTable};
pub use session::{run_session, SessionOptions};
pub use trace_io::{read_trace_dir, SessionTrace, TraceError, TRACE_SCHEMA};
pub use types::{
    Message, Role, SessionBudget, SessionResult, StopReason, TokenUsage, ToolCall, ToolCallRecord,
    ToolKind, UsageLedger,
};
