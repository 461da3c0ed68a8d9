use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::parse::{parse_hashes, parse_stage1, parse_verdict, Stage1Answer};
use super::prompt::Template;
use super::search::{try_binary_search_window, SearchOutcome};
use super::{PipelineConfig, PipelineError, PipelineKind, Prediction, Stage};
use crate::agent::{
    run_session, Backend, SessionOptions, SessionResult, SessionTrace, TokenUsage, UsageLedger,
};
use crate::candidates::{
    collect_candidates, materialize_dump, redact, render_candidate, CandidateCommit, CandidateSet,
    RedactionSpec,
};
use crate::gitio::{CommitId, FileStatus, Repo};
use crate::szz::{szz_candidates, SzzOptions, SzzResult};

const RETRY_NOTE: &str = "\n\nNote: a previous attempt at this task ended without a usable answer. \
Follow the requested answer format exactly.\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage1Outcome {
    Identified(Prediction),
    Abstain,
}

/// Redacted fix message and diff, as shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixContext {
    pub fix: CommitId,
    pub message: String,
    pub diff: String,
}

impl FixContext {
    pub fn load(
        repo: &Repo,
        fix: &CommitId,
        cfg: &PipelineConfig,
        spec: &RedactionSpec,
    ) -> Result<Self, PipelineError> {
        let meta = repo.commit_meta(fix)?;
        let diff = repo.get_commit_diff(fix, cfg.context_width)?;
        Ok(FixContext {
            fix: fix.clone(),
            message: redact(&meta.message, spec),
            diff: redact(&diff.render(), spec),
        })
    }

    /// The fix section of a prompt, honouring the include flags.
    pub fn section(&self, cfg: &PipelineConfig) -> String {
        let mut s = String::from("# Fix commit\n");
        if cfg.include_message {
            s.push_str("\n## Message\n\n");
            s.push_str(self.message.trim_end());
            s.push('\n');
        }
        if cfg.include_diff {
            s.push_str("\n## Diff\n\n```diff\n");
            s.push_str(&self.diff);
            if !self.diff.ends_with('\n') {
                s.push('\n');
            }
            s.push_str("```\n");
        }
        if !cfg.include_message && !cfg.include_diff {
            s.push_str("\n(The fix message and diff are withheld.)\n");
        }
        s
    }
}

/// One file touched by the fix, in three versions. `None` means the file does
/// not exist (or is binary) at that point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileTriple {
    pub path: String,
    pub at_candidate: Option<String>,
    pub buggy: Option<String>,
    pub fixed: Option<String>,
    /// Changed-line count in the fix, used to order files under the size cap.
    pub weight: usize,
}

/// Runs sessions for one fix and keeps their traces and token totals.
pub struct AgentRunner<'a> {
    backend: &'a dyn Backend,
    options: SessionOptions,
    redaction: RedactionSpec,
    pipeline: PipelineKind,
    fix: CommitId,
    workdir: PathBuf,
    sessions: Vec<SessionTrace>,
    tokens: TokenUsage,
}

impl<'a> AgentRunner<'a> {
    /// Session workspaces are created as subdirectories of `workdir`.
    pub fn new(
        backend: &'a dyn Backend,
        options: SessionOptions,
        redaction: RedactionSpec,
        pipeline: PipelineKind,
        fix: CommitId,
        workdir: impl Into<PathBuf>,
    ) -> Self {
        AgentRunner {
            backend,
            options,
            redaction,
            pipeline,
            fix,
            workdir: workdir.into(),
            sessions: Vec::new(),
            tokens: TokenUsage::default(),
        }
    }

    pub fn fix(&self) -> &CommitId {
        &self.fix
    }

    pub fn redaction(&self) -> &RedactionSpec {
        &self.redaction
    }

    pub fn sessions(&self) -> &[SessionTrace] {
        &self.sessions
    }

    pub fn into_sessions(self) -> Vec<SessionTrace> {
        self.sessions
    }

    /// Token totals of all sessions so far, priced once on the sum.
    pub fn usage(&self) -> UsageLedger {
        self.options.prices.ledger(self.backend.model(), &self.tokens)
    }

    pub fn prediction(&self, bics: BTreeSet<CommitId>, stage: Option<Stage>) -> Prediction {
        Prediction {
            fix: self.fix.clone(),
            bics,
            pipeline: self.pipeline,
            stage,
            session_ids: self.sessions.iter().map(|s| s.session_id.clone()).collect(),
            usage: self.usage(),
        }
    }

    fn next_id(&self, role: &str) -> String {
        format!(
            "{}-{}-{:02}-{}",
            self.fix.short(12),
            self.pipeline.name().to_ascii_lowercase(),
            self.sessions.len() + 1,
            role
        )
    }

    fn fresh_workspace(&self, id: &str) -> Result<PathBuf, PipelineError> {
        let ws = self.workdir.join(id);
        if ws.exists() {
            fs::remove_dir_all(&ws)?;
        }
        fs::create_dir_all(&ws)?;
        Ok(ws)
    }

    fn run_in(
        &mut self,
        id: String,
        role: &str,
        workspace: &Path,
        user_prompt: &str,
        candidate_count: usize,
    ) -> SessionResult {
        let system = Template::System.source();
        let result = run_session(self.backend, system, user_prompt, workspace, &self.options);
        self.tokens += result.usage.tokens();
        self.sessions.push(SessionTrace {
            session_id: id,
            fix: Some(self.fix.clone()),
            pipeline: self.pipeline.name().to_string(),
            role: role.to_string(),
            candidate_count: Some(candidate_count),
            model: self.backend.model().to_string(),
            result: result.clone(),
        });
        result
    }

    /// A session over an empty workspace.
    fn run(
        &mut self,
        role: &str,
        user_prompt: &str,
        candidate_count: usize,
    ) -> Result<SessionResult, PipelineError> {
        let id = self.next_id(role);
        let ws = self.fresh_workspace(&id)?;
        Ok(self.run_in(id, role, &ws, user_prompt, candidate_count))
    }

    /// Runs `prompt`, and once more with a retry note if `parse` rejects the answer.
    fn ask<T>(
        &mut self,
        role: &str,
        prompt: &str,
        candidate_count: usize,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>, PipelineError> {
        let first = self.run(role, prompt, candidate_count)?;
        if let Some(v) = parse(&first.final_text) {
            return Ok(Some(v));
        }
        let retry = format!("{prompt}{RETRY_NOTE}");
        let second = self.run(role, &retry, candidate_count)?;
        Ok(parse(&second.final_text))
    }
}

fn candidate_blocks(cands: &[CandidateCommit], spec: &RedactionSpec) -> String {
    cands
        .iter()
        .enumerate()
        .map(|(i, c)| format!("## Candidate {}\n\n{}", i + 1, render_candidate(c, spec)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Stage 1: asks the agent to pick among the SZZ candidates, or NONE.
pub fn stage1_identify(
    repo: &Repo,
    runner: &mut AgentRunner<'_>,
    fix_ctx: &FixContext,
    szz: &SzzResult,
    cfg: &PipelineConfig,
) -> Result<Stage1Outcome, PipelineError> {
    let mut ids: Vec<CommitId> = szz.candidates.iter().cloned().collect();
    ids.sort_by_key(|c| (szz.candidate_commit_ts.get(c).copied().unwrap_or(0), c.clone()));
    let mut cands = Vec::with_capacity(ids.len());
    for (ordinal, id) in ids.iter().enumerate() {
        let meta = repo.commit_meta(id)?;
        let diff = repo.get_commit_diff(id, cfg.context_width)?;
        cands.push(CandidateCommit {
            meta: (*meta).clone(),
            diff_text: redact(&diff.render(), runner.redaction()),
            ordinal,
        });
    }
    let count = cands.len().to_string();
    let prompt = Template::Stage1.render(&[
        ("fix", &fix_ctx.section(cfg)),
        ("count", &count),
        ("candidates", &candidate_blocks(&cands, runner.redaction())),
    ]);
    match runner.ask("stage1", &prompt, ids.len(), |t| parse_stage1(t, &ids))? {
        Some(Stage1Answer::Pick(c)) => Ok(Stage1Outcome::Identified(
            runner.prediction(BTreeSet::from([c]), Some(Stage::Stage1)),
        )),
        Some(Stage1Answer::None) | None => Ok(Stage1Outcome::Abstain),
    }
}

fn cap_text(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut cut = cap;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}\n[truncated: {} bytes omitted]\n", &text[..cut], text.len() - cut)
}

fn files_section(files: &[FileTriple], cfg: &PipelineConfig) -> String {
    let mut order: Vec<&FileTriple> = files.iter().collect();
    order.sort_by(|a, b| b.weight.cmp(&a.weight).then_with(|| a.path.cmp(&b.path)));
    let mut out = String::new();
    let mut used = 0usize;
    for f in order {
        let versions = [
            ("at the candidate commit", &f.at_candidate),
            ("buggy (before the fix)", &f.buggy),
            ("fixed (after the fix)", &f.fixed),
        ];
        let need: usize = versions
            .iter()
            .map(|(_, t)| t.as_ref().map_or(0, |t| t.len().min(cfg.file_cap_bytes)))
            .sum();
        if used > 0 && used + need > cfg.total_cap_bytes {
            out.push_str(&format!("## {}\n\n(omitted: prompt size limit)\n\n", f.path));
            continue;
        }
        used += need;
        out.push_str(&format!("## {}\n\n", f.path));
        for (label, text) in versions {
            match text {
                Some(t) => out.push_str(&format!(
                    "### {label}\n\n```\n{}```\n\n",
                    ensure_newline(cap_text(t, cfg.file_cap_bytes))
                )),
                None => out.push_str(&format!("### {label}\n\n(file does not exist)\n\n")),
            }
        }
    }
    out
}

fn ensure_newline(mut s: String) -> String {
    if !s.is_empty() && !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Asks whether the bug is already present at `candidate`. Unparseable answers
/// (after one retry) count as PRESENT. With no files to show, no session is run
/// and the answer is PRESENT.
pub fn file_analysis(
    runner: &mut AgentRunner<'_>,
    fix_ctx: &FixContext,
    candidate: &CommitId,
    files: &[FileTriple],
    cfg: &PipelineConfig,
    window: usize,
) -> Result<Verdict, PipelineError> {
    if files.is_empty() {
        return Ok(Verdict::Present);
    }
    let redacted: Vec<FileTriple> = files
        .iter()
        .map(|f| {
            let r = |t: &Option<String>| t.as_ref().map(|t| redact(t, runner.redaction()));
            FileTriple {
                path: f.path.clone(),
                at_candidate: r(&f.at_candidate),
                buggy: r(&f.buggy),
                fixed: r(&f.fixed),
                weight: f.weight,
            }
        })
        .collect();
    let label = redact(candidate.as_str(), runner.redaction());
    let prompt = Template::FileAnalysis.render(&[
        ("fix", &fix_ctx.section(cfg)),
        ("candidate", &label),
        ("files", &files_section(&redacted, cfg)),
    ]);
    Ok(runner
        .ask("file_analysis", &prompt, window, parse_verdict)?
        .unwrap_or(Verdict::Present))
}

/// Final pick among the remaining window. After two unusable answers the most
/// recent remaining candidate is returned.
pub fn commit_identifier(
    runner: &mut AgentRunner<'_>,
    fix_ctx: &FixContext,
    remaining: &[CandidateCommit],
    cfg: &PipelineConfig,
) -> Result<Prediction, PipelineError> {
    let last = remaining
        .iter()
        .max_by(|a, b| {
            (a.meta.commit_ts, &a.meta.id).cmp(&(b.meta.commit_ts, &b.meta.id))
        })
        .ok_or_else(|| PipelineError::EmptyCandidates(runner.fix().clone()))?;
    let ids: Vec<CommitId> = remaining.iter().map(|c| c.meta.id.clone()).collect();
    let count = remaining.len().to_string();
    let prompt = Template::CommitIdentifier.render(&[
        ("fix", &fix_ctx.section(cfg)),
        ("count", &count),
        ("candidates", &candidate_blocks(remaining, runner.redaction())),
    ]);
    let bics = runner
        .ask("commit_identifier", &prompt, remaining.len(), |t| parse_hashes(t, &ids))?
        .unwrap_or_else(|| BTreeSet::from([last.meta.id.clone()]));
    Ok(runner.prediction(bics, Some(Stage::Stage2)))
}

struct FixFiles {
    /// (pre-fix path, weight, buggy text, fixed text)
    files: Vec<(String, usize, Option<String>, Option<String>)>,
}

fn text_of(repo: &Repo, at: &CommitId, path: &str) -> Result<Option<String>, PipelineError> {
    Ok(repo
        .file_at(at, path)?
        .filter(|f| !f.binary)
        .map(|f| f.text))
}

impl FixFiles {
    fn load(repo: &Repo, fix: &CommitId) -> Result<Self, PipelineError> {
        let parent = repo
            .commit_meta(fix)?
            .first_parent()
            .cloned()
            .ok_or_else(|| PipelineError::NoParent(fix.clone()))?;
        let diff = repo.get_commit_diff(fix, 0)?;
        let mut files = Vec::new();
        for f in diff.files.iter().filter(|f| !f.binary) {
            let weight = f.removed_count() + f.added_count();
            let old = f.old_path.clone();
            let buggy = match (&old, f.status) {
                (Some(p), s) if s != FileStatus::Added => text_of(repo, &parent, p)?,
                _ => None,
            };
            let fixed = match &f.new_path {
                Some(p) if f.status != FileStatus::Deleted => text_of(repo, fix, p)?,
                _ => None,
            };
            let key = old.or_else(|| f.new_path.clone()).unwrap_or_default();
            files.push((key, weight, buggy, fixed));
        }
        Ok(FixFiles { files })
    }

    fn triples(&self, repo: &Repo, candidate: &CommitId) -> Result<Vec<FileTriple>, PipelineError> {
        self.files
            .iter()
            .map(|(path, weight, buggy, fixed)| {
                Ok(FileTriple {
                    path: path.clone(),
                    at_candidate: text_of(repo, candidate, path)?,
                    buggy: buggy.clone(),
                    fixed: fixed.clone(),
                    weight: *weight,
                })
            })
            .collect()
    }
}

/// Stage 2: binary search over the candidate history with file analysis, then
/// commit identification over the remaining window.
pub fn stage2_binary_search(
    repo: &Repo,
    runner: &mut AgentRunner<'_>,
    fix_ctx: &FixContext,
    cset: &CandidateSet,
    cfg: &PipelineConfig,
) -> Result<Prediction, PipelineError> {
    if cset.is_empty() {
        return Err(PipelineError::EmptyCandidates(cset.fix.clone()));
    }
    let fix_files = if cfg.selection_threshold.exceeded_by(cset.len()) {
        Some(FixFiles::load(repo, &cset.fix)?)
    } else {
        None
    };
    let window: SearchOutcome =
        try_binary_search_window(cset.len(), cfg.selection_threshold, |lo, hi, mid| {
            let files = fix_files
                .as_ref()
                .expect("loaded whenever a probe happens")
                .triples(repo, &cset.members[mid].meta.id)?;
            file_analysis(runner, fix_ctx, &cset.members[mid].meta.id, &files, cfg, hi - lo + 1)
        })?;
    commit_identifier(runner, fix_ctx, &cset.members[window.lo..=window.hi], cfg)
}

/// The two-stage pipeline: SZZ-guided selection when the fix deletes lines,
/// falling back to the history search.
pub fn szz_agent(
    repo: &Repo,
    runner: &mut AgentRunner<'_>,
    cfg: &PipelineConfig,
) -> Result<Prediction, PipelineError> {
    let fix = runner.fix().clone();
    let fix_ctx = FixContext::load(repo, &fix, cfg, runner.redaction())?;
    if repo.get_commit_diff(&fix, 0)?.removed_count() > 0 {
        let szz = szz_candidates(repo, &fix, &SzzOptions::default())?;
        if !szz.is_empty() {
            if let Stage1Outcome::Identified(p) = stage1_identify(repo, runner, &fix_ctx, &szz, cfg)? {
                return Ok(p);
            }
        }
    }
    let spec = runner.redaction().clone();
    let cset = collect_candidates(repo, &fix, cfg.follow_renames, &spec)?;
    if cset.is_empty() {
        return Ok(runner.prediction(BTreeSet::new(), None));
    }
    stage2_binary_search(repo, runner, &fix_ctx, &cset, cfg)
}

/// One session with the whole candidate dump in its workspace; the answer is
/// read from `ANSWER.txt` (or the final reply). One retry, then an empty prediction.
pub fn simple_szz_agent(
    repo: &Repo,
    runner: &mut AgentRunner<'_>,
    cfg: &PipelineConfig,
) -> Result<Prediction, PipelineError> {
    let fix = runner.fix().clone();
    let spec = runner.redaction().clone();
    let cset = collect_candidates(repo, &fix, cfg.follow_renames, &spec)?;
    if cset.is_empty() {
        return Ok(runner.prediction(BTreeSet::new(), None));
    }
    let fix_ctx = FixContext::load(repo, &fix, cfg, &spec)?;
    let universe: Vec<CommitId> = cset.ids().cloned().collect();
    let base = Template::Simple.render(&[("fix", &fix_ctx.section(cfg))]);
    for attempt in 0..2 {
        let id = runner.next_id("simple");
        let ws = runner.fresh_workspace(&id)?;
        materialize_dump(&cset, &ws, &spec)?;
        let prompt = if attempt == 0 {
            base.clone()
        } else {
            format!("{base}{RETRY_NOTE}")
        };
        let result = runner.run_in(id, "simple", &ws, &prompt, cset.len());
        let from_file = fs::read_to_string(ws.join("ANSWER.txt"))
            .ok()
            .and_then(|t| parse_hashes(&t, &universe));
        if let Some(bics) = from_file.or_else(|| parse_hashes(&result.final_text, &universe)) {
            return Ok(runner.prediction(bics, None));
        }
    }
    Ok(runner.prediction(BTreeSet::new(), None))
}
