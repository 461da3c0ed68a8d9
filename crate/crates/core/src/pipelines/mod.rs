//! Bug-introducing commit identification pipelines.
//!
//! Baselines ([`run_baseline`]) wrap the SZZ family. The agentic pipelines are
//! [`szz_agent`] (SZZ-guided selection, then a binary search over the file
//! histories) and [`simple_szz_agent`] (one session over an on-disk candidate dump).

mod agentic;
mod parse;
mod prompt;
mod search;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::UsageLedger;
use crate::candidates::CandidateError;
use crate::gitio::{CommitId, GitError, Repo};
use crate::szz::{self, SzzError, SzzOptions};

pub use agentic::{
    commit_identifier, file_analysis, simple_szz_agent, stage1_identify, stage2_binary_search,
    szz_agent, AgentRunner, FileTriple, FixContext, Stage1Outcome, Verdict,
};
pub use parse::{parse_hashes, parse_stage1, parse_verdict, Stage1Answer};
pub use prompt::{render_template, Template};
pub use search::{binary_search_window, SearchOutcome};

pub const PRED_SCHEMA: &str = "pred.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineKind {
    Szz,
    Lszz,
    Rszz,
    Vszz,
    SzzAgent,
    SimpleAgent,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 6] = [
        PipelineKind::Szz,
        PipelineKind::Lszz,
        PipelineKind::Rszz,
        PipelineKind::Vszz,
        PipelineKind::SzzAgent,
        PipelineKind::SimpleAgent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Szz => "SZZ",
            PipelineKind::Lszz => "LSZZ",
            PipelineKind::Rszz => "RSZZ",
            PipelineKind::Vszz => "VSZZ",
            PipelineKind::SzzAgent => "SZZ_AGENT",
            PipelineKind::SimpleAgent => "SIMPLE_AGENT",
        }
    }

    pub fn is_agentic(self) -> bool {
        matches!(self, PipelineKind::SzzAgent | PipelineKind::SimpleAgent)
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    /// Accepts the canonical names case-insensitively, with `-` or `_`.
    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let alias = match norm.as_str() {
            "AGENT" => "SZZ_AGENT",
            "SIMPLE" | "SIMPLE_SZZ_AGENT" => "SIMPLE_AGENT",
            other => other,
        };
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| format!("unknown pipeline {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Stage1,
    Stage2,
}

/// Window size at which the binary search stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Threshold {
    Finite(usize),
    Infinity,
}

impl Threshold {
    /// True when a window of `size` candidates still needs narrowing.
    pub fn exceeded_by(self, size: usize) -> bool {
        match self {
            Threshold::Finite(t) => size > t,
            Threshold::Infinity => false,
        }
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Finite(33)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(n) => write!(f, "{n}"),
            Threshold::Infinity => f.write_str("INFINITY"),
        }
    }
}

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if ["inf", "infinity", "∞"].iter().any(|w| s.eq_ignore_ascii_case(w)) {
            return Ok(Threshold::Infinity);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Threshold::Finite(n)),
            _ => Err(format!("selection threshold must be a positive integer or INFINITY, got {s:?}")),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Finite(n) => s.serialize_u64(*n as u64),
            Threshold::Infinity => s.serialize_str("INFINITY"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Threshold::from_str(&n.to_string()),
            Raw::S(s) => Threshold::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub selection_threshold: Threshold,
    pub context_width: u32,
    pub include_message: bool,
    pub include_diff: bool,
    pub follow_renames: bool,
    /// Per-file cap on the texts shown to file analysis.
    pub file_cap_bytes: usize,
    /// Cap on all file texts of one file-analysis prompt together.
    pub total_cap_bytes: usize,
    pub vszz_max_depth: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            selection_threshold: Threshold::default(),
            context_width: 5,
            include_message: true,
            include_diff: true,
            follow_renames: true,
            file_cap_bytes: 200 * 1024,
            total_cap_bytes: 1024 * 1024,
            vszz_max_depth: szz::DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub fix: CommitId,
    pub bics: BTreeSet<CommitId>,
    pub pipeline: PipelineKind,
    pub stage: Option<Stage>,
    pub session_ids: Vec<String>,
    pub usage: UsageLedger,
}

impl Prediction {
    pub fn empty(fix: CommitId, pipeline: PipelineKind) -> Self {
        Prediction {
            fix,
            bics: BTreeSet::new(),
            pipeline,
            stage: None,
            session_ids: Vec::new(),
            usage: UsageLedger::default(),
        }
    }
}

/// One `pred.v1` JSONL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub schema: String,
    pub repo_id: String,
    pub fix: CommitId,
    pub bics: Vec<CommitId>,
    pub pipeline: PipelineKind,
    pub stage: Option<Stage>,
    pub session_ids: Vec<String>,
    pub usage: UsageLedger,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn new(repo_id: &str, p: &Prediction, config_hash: &str) -> Self {
        PredictionRecord {
            schema: PRED_SCHEMA.to_string(),
            repo_id: repo_id.to_string(),
            fix: p.fix.clone(),
            bics: p.bics.iter().cloned().collect(),
            pipeline: p.pipeline,
            stage: p.stage,
            session_ids: p.session_ids.clone(),
            usage: p.usage,
            config_hash: config_hash.to_string(),
            error: None,
        }
    }

    pub fn bic_set(&self) -> BTreeSet<CommitId> {
        self.bics.iter().cloned().collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no candidates for {0}")]
    EmptyCandidates(CommitId),
    #[error("commit {0} has no parent")]
    NoParent(CommitId),
    #[error("{0} is not a baseline pipeline")]
    NotABaseline(PipelineKind),
    #[error(transparent)]
    Git(#[from] GitError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error("workspace i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SzzError> for PipelineError {
    fn from(e: SzzError) -> Self {
        match e {
            SzzError::NoParent(c) => PipelineError::NoParent(c),
            SzzError::Git(g) => PipelineError::Git(g),
        }
    }
}

/// Runs one of the SZZ-family baselines. A fix that deletes nothing yields an
/// empty prediction.
pub fn run_baseline(
    repo: &Repo,
    fix: &CommitId,
    kind: PipelineKind,
    cfg: &PipelineConfig,
) -> Result<Prediction, PipelineError> {
    let opts = SzzOptions::default();
    let bics: BTreeSet<CommitId> = match kind {
        PipelineKind::Szz => szz::szz_candidates(repo, fix, &opts)?.candidates,
        PipelineKind::Lszz => szz::lszz_select(&szz::szz_candidates(repo, fix, &opts)?)
            .into_iter()
            .collect(),
        PipelineKind::Rszz => szz::rszz_select(&szz::szz_candidates(repo, fix, &opts)?)
            .into_iter()
            .collect(),
        PipelineKind::Vszz => szz::vszz_candidates(repo, fix, cfg.vszz_max_depth, &opts)?.candidates,
        other => return Err(PipelineError::NotABaseline(other)),
    };
    Ok(Prediction {
        bics,
        ..Prediction::empty(fix.clone(), kind)
    })
}
