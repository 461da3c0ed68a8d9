//! Post-hoc analysis of agent sessions: how often each tool is called, where
//! grep patterns come from, pattern statistics, and token/cost usage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::agent::{PriceTable, SessionTrace, TokenUsage, ToolKind};
use crate::candidates::{redact, RedactionSpec, PLACEHOLDER};
use crate::gitio::{CommitDiff, CommitId, GitError, LineKind, Repo};

pub const MATERIALS_SCHEMA: &str = "materials.v1";
pub const ANALYSIS_SCHEMA: &str = "analysis.v1";

const REGEX_META: &[char] = &['.', '^', '$', '*', '+', '?', '(', ')', '[', ']', '{', '}', '|', '\\'];

static CALL_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());
static HASHLIKE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[0-9a-fA-F]{7,40}$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no traces to analyse")]
    EmptyInput,
    #[error("no grep calls in the traces")]
    NoGrepCalls,
}

/// The fix-commit text an agent was shown, split by where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixMaterials {
    #[serde(default)]
    pub fix: Option<CommitId>,
    pub message: String,
    pub removed_lines: Vec<String>,
    pub added_lines: Vec<String>,
    pub context_lines: Vec<String>,
    pub hunk_headers: Vec<String>,
    pub function_names: Vec<String>,
    pub file_paths: Vec<String>,
    pub path_components: Vec<String>,
    /// The rendered diff, with `+`/`-` markers and headers.
    pub raw_diff: String,
}

#[derive(Serialize, Deserialize)]
struct VersionedMaterials {
    schema: String,
    #[serde(flatten)]
    materials: FixMaterials,
}

fn function_names_of(header: &str) -> Vec<String> {
    CALL_NAME
        .captures_iter(header)
        .map(|c| c[1].to_string())
        .collect()
}

impl FixMaterials {
    /// Builds materials from a message and diff, redacting both.
    pub fn from_diff(fix: Option<CommitId>, message: &str, diff: &CommitDiff, spec: &RedactionSpec) -> Self {
        let mut m = FixMaterials {
            fix,
            message: redact(message, spec),
            raw_diff: redact(&diff.render(), spec),
            ..Default::default()
        };
        let mut paths = BTreeSet::new();
        for f in &diff.files {
            for p in [&f.old_path, &f.new_path].into_iter().flatten() {
                paths.insert(p.clone());
            }
            for h in &f.hunks {
                if !h.header.is_empty() {
                    let header = redact(&h.header, spec);
                    for name in function_names_of(&header) {
                        if !m.function_names.contains(&name) {
                            m.function_names.push(name);
                        }
                    }
                    m.hunk_headers.push(header);
                }
                for l in &h.lines {
                    let text = redact(&l.content, spec);
                    match l.kind {
                        LineKind::Removed => m.removed_lines.push(text),
                        LineKind::Added => m.added_lines.push(text),
                        LineKind::Context => m.context_lines.push(text),
                    }
                }
            }
        }
        m.path_components = paths
            .iter()
            .flat_map(|p| p.split('/'))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        m.file_paths = paths.into_iter().collect();
        m
    }

    pub fn load_from_repo(
        repo: &Repo,
        fix: &CommitId,
        context_width: u32,
        spec: &RedactionSpec,
    ) -> Result<Self, GitError> {
        let meta = repo.commit_meta(fix)?;
        let diff = repo.get_commit_diff(fix, context_width)?;
        Ok(Self::from_diff(Some(fix.clone()), &meta.message, &diff, spec))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VersionedMaterials {
            schema: MATERIALS_SCHEMA.to_string(),
            materials: self.clone(),
        })
        .expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let v: VersionedMaterials = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if v.schema != MATERIALS_SCHEMA {
            return Err(format!("unsupported schema {:?}", v.schema));
        }
        Ok(v.materials)
    }

    /// `<dir>/<fix>.json`
    pub fn path_in(dir: &Path, fix: &CommitId) -> PathBuf {
        dir.join(format!("{fix}.json"))
    }
}

/// Reads every materials file in a directory, keyed by fix.
pub fn read_materials_dir(dir: &Path) -> Result<BTreeMap<CommitId, FixMaterials>, String> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for e in entries {
        let path = e.map_err(|e| e.to_string())?.path();
        if path.extension().is_none_or(|x| x != "json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let m = FixMaterials::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(fix) = m.fix.clone() {
            out.insert(fix, m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GrepSource {
    RemovedLines,
    AddedLines,
    ContextLines,
    Message,
    FunctionNames,
    HunkHeaders,
    FilePaths,
    PathComponents,
    RawMatch,
    CommitHashPattern,
    Undetermined,
}

impl GrepSource {
    pub const ALL: [GrepSource; 11] = [
        GrepSource::RemovedLines,
        GrepSource::AddedLines,
        GrepSource::ContextLines,
        GrepSource::Message,
        GrepSource::FunctionNames,
        GrepSource::HunkHeaders,
        GrepSource::FilePaths,
        GrepSource::PathComponents,
        GrepSource::RawMatch,
        GrepSource::CommitHashPattern,
        GrepSource::Undetermined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GrepSource::RemovedLines => "REMOVED_LINES",
            GrepSource::AddedLines => "ADDED_LINES",
            GrepSource::ContextLines => "CONTEXT_LINES",
            GrepSource::Message => "MESSAGE",
            GrepSource::FunctionNames => "FUNCTION_NAMES",
            GrepSource::HunkHeaders => "HUNK_HEADERS",
            GrepSource::FilePaths => "FILE_PATHS",
            GrepSource::PathComponents => "PATH_COMPONENTS",
            GrepSource::RawMatch => "RAW_MATCH",
            GrepSource::CommitHashPattern => "COMMIT_HASH_PATTERN",
            GrepSource::Undetermined => "UNDETERMINED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrepProvenance {
    pub session_id: String,
    pub seq: u32,
    pub pattern: String,
    pub normalized: String,
    pub literal: bool,
    pub labels: BTreeSet<GrepSource>,
}

/// A grep call's pattern and whether it was sent in literal mode.
fn grep_calls(trace: &SessionTrace) -> impl Iterator<Item = (u32, String, bool)> + '_ {
    trace
        .result
        .trace
        .iter()
        .filter(|r| r.tool == ToolKind::Grep)
        .filter_map(|r| {
            let pattern = r.args.get("pattern")?.as_str()?.to_string();
            let literal_mode = r
                .args
                .get("mode")
                .and_then(|m| m.as_str())
                .is_some_and(|m| m.eq_ignore_ascii_case("literal"));
            Some((r.seq, pattern, literal_mode))
        })
}

/// If every regex metacharacter in `p` is backslash-escaped, the literal text
/// it matches; otherwise None.
pub fn unescape_literal(p: &str) -> Option<String> {
    let mut out = String::with_capacity(p.len());
    let mut chars = p.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(n) if REGEX_META.contains(&n) || n == '-' || n == '/' || n == ' ' => out.push(n),
                _ => return None,
            }
        } else if REGEX_META.contains(&c) {
            return None;
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// True for literal-mode patterns and patterns with no unescaped metacharacter.
pub fn is_literal(pattern: &str, literal_mode: bool) -> bool {
    literal_mode || unescape_literal(pattern).is_some()
}

pub fn normalize_pattern(pattern: &str, literal_mode: bool) -> String {
    if literal_mode {
        return pattern.trim().to_string();
    }
    unescape_literal(pattern)
        .unwrap_or_else(|| pattern.to_string())
        .trim()
        .to_string()
}

/// Labels for one pattern: every material source containing it (case-sensitive
/// substring), COMMIT_HASH_PATTERN for hash-like patterns, RAW_MATCH when only
/// the raw diff text (markers, headers, or text spanning lines) contains it,
/// and UNDETERMINED alone when nothing applies.
pub fn classify_pattern(normalized: &str, m: &FixMaterials) -> BTreeSet<GrepSource> {
    let mut labels = BTreeSet::new();
    if normalized.is_empty() {
        return BTreeSet::from([GrepSource::Undetermined]);
    }
    let any = |xs: &[String]| xs.iter().any(|x| x.contains(normalized));
    let checks = [
        (GrepSource::RemovedLines, any(&m.removed_lines)),
        (GrepSource::AddedLines, any(&m.added_lines)),
        (GrepSource::ContextLines, any(&m.context_lines)),
        (GrepSource::Message, m.message.contains(normalized)),
        (GrepSource::FunctionNames, any(&m.function_names)),
        (GrepSource::HunkHeaders, any(&m.hunk_headers)),
        (GrepSource::FilePaths, any(&m.file_paths)),
        (GrepSource::PathComponents, any(&m.path_components)),
    ];
    for (label, hit) in checks {
        if hit {
            labels.insert(label);
        }
    }
    let in_diff_parts = labels.iter().any(|l| {
        matches!(
            l,
            GrepSource::RemovedLines
                | GrepSource::AddedLines
                | GrepSource::ContextLines
                | GrepSource::HunkHeaders
                | GrepSource::FilePaths
        )
    });
    if !in_diff_parts && m.raw_diff.contains(normalized) {
        labels.insert(GrepSource::RawMatch);
    }
    if HASHLIKE.is_match(normalized) || normalized == PLACEHOLDER {
        labels.insert(GrepSource::CommitHashPattern);
    }
    if labels.is_empty() {
        labels.insert(GrepSource::Undetermined);
    }
    labels
}

pub fn classify_grep_sources(trace: &SessionTrace, materials: &FixMaterials) -> Vec<GrepProvenance> {
    grep_calls(trace)
        .map(|(seq, pattern, literal_mode)| {
            let normalized = normalize_pattern(&pattern, literal_mode);
            GrepProvenance {
                session_id: trace.session_id.clone(),
                seq,
                literal: is_literal(&pattern, literal_mode),
                labels: classify_pattern(&normalized, materials),
                normalized,
                pattern,
            }
        })
        .collect()
}

/// Label → (count, percent of grep calls). Percentages can add up past 100.
pub fn provenance_histogram(items: &[GrepProvenance]) -> BTreeMap<GrepSource, (usize, f64)> {
    let mut counts: BTreeMap<GrepSource, usize> = BTreeMap::new();
    for p in items {
        for l in &p.labels {
            *counts.entry(*l).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(l, c)| (l, (c, 100.0 * c as f64 / items.len() as f64)))
        .collect()
}

fn fix_key(t: &SessionTrace) -> String {
    t.fix
        .as_ref()
        .map_or_else(|| format!("session:{}", t.session_id), |f| f.to_string())
}

/// Mean number of calls per fix for each tool; tools never called report 0.
pub fn tool_distribution(traces: &[SessionTrace]) -> Result<BTreeMap<ToolKind, f64>, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut per_fix: BTreeMap<String, BTreeMap<ToolKind, usize>> = BTreeMap::new();
    for t in traces {
        let counts = per_fix.entry(fix_key(t)).or_default();
        for r in &t.result.trace {
            *counts.entry(r.tool).or_default() += 1;
        }
    }
    let n = per_fix.len() as f64;
    Ok(ToolKind::ALL
        .into_iter()
        .map(|k| {
            let total: usize = per_fix.values().map(|c| c.get(&k).copied().unwrap_or(0)).sum();
            (k, total as f64 / n)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub count: usize,
    pub median_len: f64,
    pub mean_len: f64,
    /// Population standard deviation.
    pub std_len: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub literal_fraction: f64,
}

/// Length statistics (in characters) of raw grep patterns.
pub fn pattern_stats(traces: &[SessionTrace]) -> Result<PatternStats, AnalysisError> {
    let calls: Vec<(usize, bool)> = traces
        .iter()
        .flat_map(grep_calls)
        .map(|(_, p, lit)| (p.chars().count(), is_literal(&p, lit)))
        .collect();
    if calls.is_empty() {
        return Err(AnalysisError::NoGrepCalls);
    }
    let mut lens: Vec<usize> = calls.iter().map(|c| c.0).collect();
    lens.sort_unstable();
    let n = lens.len();
    let median_len = if n % 2 == 1 {
        lens[n / 2] as f64
    } else {
        (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
    };
    let mean_len = lens.iter().sum::<usize>() as f64 / n as f64;
    let var = lens.iter().map(|&l| (l as f64 - mean_len).powi(2)).sum::<f64>() / n as f64;
    Ok(PatternStats {
        count: n,
        median_len,
        mean_len,
        std_len: var.sqrt(),
        min_len: lens[0],
        max_len: lens[n - 1],
        literal_fraction: calls.iter().filter(|c| c.1).count() as f64 / n as f64,
    })
}

/// Pearson correlation; None when either side has zero variance or fewer than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixUsage {
    pub fix: String,
    pub sessions: usize,
    pub candidate_count: Option<usize>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cache_tokens: u64,
    pub total_tokens: u64,
    pub cost_usd: Decimal,
    pub tool_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub per_fix: Vec<FixUsage>,
    pub mean_cost_usd: Decimal,
    pub mean_tokens: f64,
    pub mean_tool_calls: f64,
    pub correlation_candidates_vs_cost: Option<f64>,
}

/// Per-fix token, cost and tool-call totals. Sessions of a model known to the
/// price table are re-priced from their tokens; others keep the recorded cost.
pub fn usage_report(traces: &[SessionTrace], prices: &PriceTable) -> Result<UsageReport, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    struct Acc {
        sessions: usize,
        candidates: Option<usize>,
        by_model: BTreeMap<String, TokenUsage>,
        recorded: Decimal,
        tool_calls: usize,
    }
    let mut per_fix: BTreeMap<String, Acc> = BTreeMap::new();
    for t in traces {
        let a = per_fix.entry(fix_key(t)).or_insert_with(|| Acc {
            sessions: 0,
            candidates: None,
            by_model: BTreeMap::new(),
            recorded: Decimal::ZERO,
            tool_calls: 0,
        });
        a.sessions += 1;
        a.candidates = a.candidates.max(t.candidate_count);
        a.tool_calls += t.result.trace.len();
        if prices.models.contains_key(&t.model) {
            *a.by_model.entry(t.model.clone()).or_default() += t.result.usage.tokens();
        } else {
            a.recorded += t.result.usage.cost_usd;
            *a.by_model.entry(String::new()).or_default() += t.result.usage.tokens();
        }
    }
    let rows: Vec<FixUsage> = per_fix
        .into_iter()
        .map(|(fix, a)| {
            let mut tokens = TokenUsage::default();
            let mut cost = a.recorded;
            for (model, u) in &a.by_model {
                tokens += *u;
                if !model.is_empty() {
                    cost += prices.cost(model, u);
                }
            }
            FixUsage {
                fix,
                sessions: a.sessions,
                candidate_count: a.candidates,
                input_tokens: tokens.input_tokens,
                output_tokens: tokens.output_tokens,
                cache_tokens: tokens.cache_tokens,
                total_tokens: tokens.total(),
                cost_usd: cost,
                tool_calls: a.tool_calls,
            }
        })
        .collect();
    let n = rows.len();
    let mean_cost_usd = rows.iter().map(|r| r.cost_usd).sum::<Decimal>() / Decimal::from(n);
    let mean_tokens = rows.iter().map(|r| r.total_tokens as f64).sum::<f64>() / n as f64;
    let mean_tool_calls = rows.iter().map(|r| r.tool_calls as f64).sum::<f64>() / n as f64;
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let c = r.candidate_count? as f64;
            Some((c, r.cost_usd.try_into().unwrap_or(0.0)))
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(UsageReport {
        per_fix: rows,
        mean_cost_usd,
        mean_tokens,
        mean_tool_calls,
        correlation_candidates_vs_cost: pearson(&xs, &ys),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub label: GrepSource,
    pub count: usize,
    pub percent: f64,
}

/// `analysis.v1`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub sessions: usize,
    pub fixes: usize,
    pub tool_distribution: BTreeMap<ToolKind, f64>,
    pub grep_calls: Vec<GrepProvenance>,
    pub provenance_histogram: Vec<HistogramRow>,
    /// None when no grep call was made.
    pub pattern_stats: Option<PatternStats>,
    pub usage: UsageReport,
    /// Fixes whose traces had no materials; their grep calls are not classified.
    pub fixes_without_materials: Vec<String>,
}

pub fn analyse(
    traces: &[SessionTrace],
    materials: &BTreeMap<CommitId, FixMaterials>,
    prices: &PriceTable,
) -> Result<AnalysisReport, AnalysisError> {
    let tool_distribution = tool_distribution(traces)?;
    let mut grep = Vec::new();
    let mut missing = BTreeSet::new();
    for t in traces {
        match t.fix.as_ref().and_then(|f| materials.get(f)) {
            Some(m) => grep.extend(classify_grep_sources(t, m)),
            None => {
                if grep_calls(t).next().is_some() {
                    missing.insert(fix_key(t));
                }
            }
        }
    }
    let provenance_histogram = provenance_histogram(&grep)
        .into_iter()
        .map(|(label, (count, percent))| HistogramRow { label, count, percent })
        .collect();
    let pattern_stats = match pattern_stats(traces) {
        Ok(s) => Some(s),
        Err(AnalysisError::NoGrepCalls) => None,
        Err(e) => return Err(e),
    };
    let fixes = traces.iter().map(fix_key).collect::<BTreeSet<_>>().len();
    Ok(AnalysisReport {
        schema: ANALYSIS_SCHEMA.to_string(),
        sessions: traces.len(),
        fixes,
        tool_distribution,
        grep_calls: grep,
        provenance_histogram,
        pattern_stats,
        usage: usage_report(traces, prices)?,
        fixes_without_materials: missing.into_iter().collect(),
    })
}
