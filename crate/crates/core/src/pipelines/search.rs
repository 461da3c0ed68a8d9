use std::convert::Infallible;

use super::agentic::Verdict;
use super::Threshold;

/// Final window `[lo, hi]` (inclusive) and the ordinals that were probed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub lo: usize,
    pub hi: usize,
    pub probes: Vec<usize>,
}

impl SearchOutcome {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.lo..=self.hi).contains(&i)
    }
}

/// Narrows `[0, n)` while the window is larger than `threshold`. `judge(mid)`
/// says whether the bug is already present at position `mid`; PRESENT keeps
/// the lower half including `mid`, ABSENT the upper half after it.
///
/// Panics if `n == 0`.
pub fn binary_search_window(
    n: usize,
    threshold: Threshold,
    mut judge: impl FnMut(usize) -> Verdict,
) -> SearchOutcome {
    let r: Result<_, Infallible> = try_binary_search_window(n, threshold, |_, _, mid| Ok(judge(mid)));
    match r {
        Ok(o) => o,
        Err(e) => match e {},
    }
}

/// As [`binary_search_window`], with a fallible judge that also sees the
/// current window `[lo, hi]`.
pub(crate) fn try_binary_search_window<E>(
    n: usize,
    threshold: Threshold,
    mut judge: impl FnMut(usize, usize, usize) -> Result<Verdict, E>,
) -> Result<SearchOutcome, E> {
    assert!(n > 0, "binary search over an empty window");
    let (mut lo, mut hi) = (0usize, n - 1);
    let mut probes = Vec::new();
    while threshold.exceeded_by(hi - lo + 1) {
        let mid = (lo + hi) / 2;
        probes.push(mid);
        match judge(lo, hi, mid)? {
            Verdict::Present => hi = mid,
            Verdict::Absent => lo = mid + 1,
        }
    }
    Ok(SearchOutcome { lo, hi, probes })
}
