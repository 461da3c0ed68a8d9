//! Bug-introducing commit identification toolkit.
//!
//! * [`gitio`]: read-only git access (diffs, blame, file histories).
//! * [`szz`]: classic SZZ and the L/R/V variants.
//! * [`candidates`]: file-history candidate sets, hash redaction, on-disk dumps.
//! * [`agent`]: tool-calling agent loop with Read/Grep/Glob/Write.
//! * [`pipelines`]: the binary-search agent pipeline and the direct-selection agent.
//! * [`eval`]: datasets, precision/recall/F1, paired statistics, `Fixes:` collection.
//! * [`trace`]: tool-usage and grep-provenance analysis of agent sessions.
//! * [`batch`]: resumable dataset runs writing predictions and traces.

pub mod fixture;
pub mod gitio;
pub mod agent;
pub mod candidates;
pub mod szz;
pub mod pipelines;
pub mod eval;
pub mod trace;
pub mod batch;
