//! Wilcoxon signed-rank test and the rank-biserial effect size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Largest effective sample size handled by the exact distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub statistic_w: f64,
    pub p_value: f64,
    pub effect_r: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
}

/// Ranks of the non-zero |a − b|, with average ranks for ties.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRanks {
    pub ranks: Vec<f64>,
    pub positive: Vec<bool>,
    /// Sizes of the tie groups (1 for untied values).
    pub tie_groups: Vec<usize>,
}

impl SignedRanks {
    pub fn n(&self) -> usize {
        self.ranks.len()
    }

    pub fn w_plus(&self) -> f64 {
        self.ranks.iter().zip(&self.positive).filter(|(_, p)| **p).map(|(r, _)| r).sum()
    }

    pub fn w_minus(&self) -> f64 {
        self.ranks.iter().zip(&self.positive).filter(|(_, p)| !**p).map(|(r, _)| r).sum()
    }
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
}

/// Differences within 1e-12 (relative) of zero are dropped and magnitudes that
/// close are tied, so `0.3 - 0.2` and `0.1` rank together.
pub fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let mut diffs: Vec<(f64, bool)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| !close(**x, **y))
        .map(|(x, y)| ((x - y).abs(), x > y))
        .collect();
    if diffs.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    diffs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0; diffs.len()];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < diffs.len() {
        let mut j = i + 1;
        while j < diffs.len() && close(diffs[j].0, diffs[i].0) {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        ranks[i..j].fill(avg);
        tie_groups.push(j - i);
        i = j;
    }
    Ok(SignedRanks {
        ranks,
        positive: diffs.iter().map(|d| d.1).collect(),
        tie_groups,
    })
}

/// Two-sided exact p-value: the null distribution of W⁺ over all 2ⁿ sign
/// assignments, counted on doubled (integer) ranks.
pub fn wilcoxon_exact_p(sr: &SignedRanks) -> f64 {
    let doubled: Vec<usize> = sr.ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (sr.w_plus() * 2.0).round() as usize;
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
    let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Two-sided normal approximation with tie and continuity corrections.
pub fn wilcoxon_normal_p(sr: &SignedRanks) -> f64 {
    let n = sr.n() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = sr
        .tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((sr.w_plus() - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * std.cdf(-z)).min(1.0)
}

pub fn wilcoxon_with(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<PairedTestResult, EvalError> {
    let sr = signed_ranks(a, b)?;
    let p_value = match method {
        WilcoxonMethod::Exact => wilcoxon_exact_p(&sr),
        WilcoxonMethod::Normal => wilcoxon_normal_p(&sr),
    };
    let (wp, wm) = (sr.w_plus(), sr.w_minus());
    Ok(PairedTestResult {
        statistic_w: wp,
        p_value,
        effect_r: (wp - wm) / (wp + wm),
        n_effective: sr.n(),
        method,
    })
}

/// Exact p up to [`EXACT_MAX_N`] non-zero differences, normal approximation above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<PairedTestResult, EvalError> {
    let n = signed_ranks(a, b)?.n();
    let method = if n <= EXACT_MAX_N {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::Normal
    };
    wilcoxon_with(a, b, method)
}

/// (R⁺ − R⁻)/(R⁺ + R⁻) over the non-zero differences.
pub fn rank_biserial(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    let sr = signed_ranks(a, b)?;
    let (wp, wm) = (sr.w_plus(), sr.w_minus());
    Ok((wp - wm) / (wp + wm))
}
