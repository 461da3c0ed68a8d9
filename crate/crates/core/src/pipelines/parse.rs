//! Parsing of agent answers. The answer region is the last `ANSWER:` line when
//! there is one, otherwise the whole reply.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::agentic::Verdict;
use crate::gitio::CommitId;

static ANSWER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?mi)^[\s*>`#-]*ANSWER\s*:\s*(.*)$").unwrap());
static HEX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[0-9a-fA-F]{7,40}\b").unwrap());
static NONE_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bNONE\b").unwrap());
static VERDICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(PRESENT|ABSENT)\b").unwrap());

/// Most hashes a commit-identifier answer may name.
pub const MAX_PICKS: usize = 5;

fn answer_region(text: &str) -> &str {
    ANSWER_LINE
        .captures_iter(text)
        .last()
        .and_then(|c| c.get(1))
        .map_or(text, |m| m.as_str())
}

/// The unique member of `universe` that `token` abbreviates.
fn resolve<'a>(token: &str, universe: &'a [CommitId]) -> Option<&'a CommitId> {
    let t = token.to_ascii_lowercase();
    let mut hits = universe.iter().filter(|c| c.as_str().starts_with(&t));
    let first = hits.next()?;
    hits.next().is_none().then_some(first)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage1Answer {
    Pick(CommitId),
    None,
}

/// A stage-1 answer: exactly one candidate (every hash mentioned must resolve to
/// it) or the word NONE with no hash. Anything else is a parse failure.
pub fn parse_stage1(text: &str, candidates: &[CommitId]) -> Option<Stage1Answer> {
    let region = answer_region(text);
    let tokens: Vec<&str> = HEX.find_iter(region).map(|m| m.as_str()).collect();
    if tokens.is_empty() {
        return NONE_WORD.is_match(region).then_some(Stage1Answer::None);
    }
    let mut picked: Option<&CommitId> = None;
    for t in tokens {
        let c = resolve(t, candidates)?;
        match picked {
            Some(p) if p != c => return None,
            _ => picked = Some(c),
        }
    }
    picked.cloned().map(Stage1Answer::Pick)
}

/// One to [`MAX_PICKS`] hashes, each resolving uniquely into `universe`.
pub fn parse_hashes(text: &str, universe: &[CommitId]) -> Option<BTreeSet<CommitId>> {
    let region = answer_region(text);
    let mut out = BTreeSet::new();
    for m in HEX.find_iter(region) {
        out.insert(resolve(m.as_str(), universe)?.clone());
    }
    (!out.is_empty() && out.len() <= MAX_PICKS).then_some(out)
}

/// PRESENT or ABSENT, when exactly one of the two words appears.
pub fn parse_verdict(text: &str) -> Option<Verdict> {
    let region = answer_region(text);
    let words: BTreeSet<&str> = VERDICT.find_iter(region).map(|m| m.as_str()).collect();
    match words.into_iter().collect::<Vec<_>>().as_slice() {
        ["PRESENT"] => Some(Verdict::Present),
        ["ABSENT"] => Some(Verdict::Absent),
        _ => None,
    }
}
