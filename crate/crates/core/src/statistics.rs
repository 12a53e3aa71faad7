//! Mann-Whitney U testing, sample summaries and relevance binning.
//!
//! # Conventions
//!
//! `mann_whitney_u(target, non_target)` reports `U` as the number of
//! (target, non-target) pairs where the target value is larger, with ties
//! counting one half. The z-score is reported from the non-target side, so a
//! target sample that tends to be larger gives a *negative* z:
//!
//! ```text
//! z = -sign(U - μ) · max(|U - μ| - 0.5, 0) / σ
//! μ = n1·n2 / 2
//! σ² = n1·n2/12 · ((n + 1) - Σ(t³ - t) / (n·(n - 1)))
//! ```
//!
//! where `t` ranges over the sizes of tied groups in the pooled sample. The
//! one-sided p-value is for the alternative "target values are larger":
//! `P(U' ≥ U) ≈ Φ((μ - U + 0.5) / σ)`. The two-sided p-value is
//! `min(1, 2·(1 - Φ(|z|)))`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MwuResult {
    pub u_statistic: f64,
    pub z_score: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub n1: usize,
    pub n2: usize,
    /// Every pooled value is identical; z is 0 and both p-values are 1.
    pub degenerate: bool,
}

/// Average (mid) ranks, 1-based, of `values` in their pooled order. Also
/// returns the tie correction term `Σ(t³ - t)`.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) share ranks i+1..=j.
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

fn check_samples(target: &[f64], non_target: &[f64]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::EmptySample("target"));
    }
    if non_target.is_empty() {
        return Err(Error::EmptySample("non-target"));
    }
    if target.iter().chain(non_target).any(|v| v.is_nan()) {
        return Err(Error::InvalidData("NaN in Mann-Whitney sample".into()));
    }
    Ok(())
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

/// Keeps tail probabilities inside `(0, 1]` even when the normal CDF underflows.
fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Two-sample Mann-Whitney U test with tie-corrected normal approximation.
pub fn mann_whitney_u(target: &[f64], non_target: &[f64]) -> Result<MwuResult> {
    check_samples(target, non_target)?;
    let n1 = target.len();
    let n2 = non_target.len();
    let pooled: Vec<f64> = target.iter().chain(non_target).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let u = rank_sum - n1f * (n1f + 1.0) / 2.0;
    let n = n1f + n2f;
    let mean = n1f * n2f / 2.0;
    let variance = if n > 1.0 {
        n1f * n2f / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))
    } else {
        0.0
    };
    if variance <= 0.0 {
        return Ok(MwuResult {
            u_statistic: u,
            z_score: 0.0,
            p_one_sided: 1.0,
            p_two_sided: 1.0,
            n1,
            n2,
            degenerate: true,
        });
    }
    let sigma = variance.sqrt();
    let d = u - mean;
    let corrected = (d.abs() - 0.5).max(0.0);
    let z = if d > 0.0 {
        -corrected / sigma
    } else if d < 0.0 {
        corrected / sigma
    } else {
        0.0
    };
    let normal = standard_normal();
    let p_one = clamp_p(normal.cdf((mean - u + 0.5) / sigma));
    let p_two = clamp_p((2.0 * normal.cdf(-z.abs())).min(1.0));
    Ok(MwuResult {
        u_statistic: u,
        z_score: z,
        p_one_sided: p_one,
        p_two_sided: p_two,
        n1,
        n2,
        degenerate: false,
    })
}

/// Largest pooled sample size accepted by [`exact_mwu_p`].
pub const EXACT_MWU_MAX_N: usize = 16;

/// Exact one-sided permutation p-value `P(U' ≥ U)` over all ways of choosing
/// which pooled values belong to the target group.
pub fn exact_mwu_p(target: &[f64], non_target: &[f64]) -> Result<f64> {
    check_samples(target, non_target)?;
    let n1 = target.len();
    let n = n1 + non_target.len();
    if n > EXACT_MWU_MAX_N {
        return Err(Error::InvalidData(format!(
            "exact test limited to {EXACT_MWU_MAX_N} pooled values, got {n}"
        )));
    }
    let pooled: Vec<f64> = target.iter().chain(non_target).copied().collect();
    let (ranks, _) = midranks(&pooled);
    // Work in doubled ranks so every sum is an exact integer.
    let doubled: Vec<i64> = ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
    let observed: i64 = doubled[..n1].iter().sum();
    let mut extreme = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        total += 1;
        let sum: i64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| doubled[i]).sum();
        if sum >= observed {
            extreme += 1;
        }
    }
    Ok(extreme as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupSummary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
    /// Percentage of values at or above the activation threshold.
    pub activation_pct: f64,
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    }
}

pub fn summarize(values: &[f64], threshold: f64) -> Result<GroupSummary> {
    if values.is_empty() {
        return Err(Error::EmptySample("summary"));
    }
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let above = values.iter().filter(|&&v| v >= threshold).count();
    Ok(GroupSummary {
        mean,
        median: median_of(values),
        count,
        activation_pct: 100.0 * above as f64 / count as f64,
    })
}

/// Mean, median and sample standard deviation (n - 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Describe {
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub count: usize,
}

pub fn describe(values: &[f64]) -> Result<Describe> {
    if values.is_empty() {
        return Err(Error::EmptySample("describe"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Describe {
        mean,
        median: median_of(values),
        std_dev,
        count: values.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RelevanceBins {
    /// `[90, 100]`
    pub high: usize,
    /// `[80, 90)`
    pub medium: usize,
    /// `[0, 80)`
    pub low: usize,
}

pub fn bin_relevance(percentages: &[f64]) -> Result<RelevanceBins> {
    let mut bins = RelevanceBins::default();
    for &p in percentages {
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::InvalidData(format!("percentage {p} outside [0, 100]")));
        }
        if p >= 90.0 {
            bins.high += 1;
        } else if p >= 80.0 {
            bins.medium += 1;
        } else {
            bins.low += 1;
        }
    }
    Ok(bins)
}

/// Report formatting for p-values: `< .00001` below 1e-5, else 4 decimals.
pub fn format_p(p: f64) -> String {
    if p < 1e-5 {
        "< .00001".to_string()
    } else {
        format!("{p:.4}")
    }
}
