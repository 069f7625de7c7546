//! One-way and repeated-measures ANOVA, paired t-tests with Bonferroni
//! correction.

use std::collections::BTreeMap;

use serde::Serialize;

use super::special::{f_sf, t_two_sided_p};
use super::AnalysisError;
use crate::haptics::PatternId;

pub const ALPHA: f64 = 0.05;

/// Relative threshold below which a sum of squares counts as zero.
const SS_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaResult {
    pub f_statistic: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwiseResult {
    pub pair: (PatternId, PatternId),
    pub t_statistic: f64,
    pub raw_p: f64,
    pub corrected_p: f64,
    pub significant: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn f_test(ss_effect: f64, ss_error: f64, scale: f64, df1: usize, df2: usize) -> Result<AnovaResult, AnalysisError> {
    let zero = SS_ZERO * scale.max(f64::MIN_POSITIVE);
    let effect_zero = ss_effect <= zero;
    let error_zero = ss_error <= zero;
    if error_zero && !effect_zero {
        return Err(AnalysisError::DegenerateVariance);
    }
    if effect_zero {
        return Ok(AnovaResult {
            f_statistic: 0.0,
            df_between: df1,
            df_within: df2,
            p_value: 1.0,
        });
    }
    let f = (ss_effect / df1 as f64) / (ss_error / df2 as f64);
    Ok(AnovaResult {
        f_statistic: f,
        df_between: df1,
        df_within: df2,
        p_value: f_sf(f, df1 as f64, df2 as f64),
    })
}

/// Between-groups one-way ANOVA.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, AnalysisError> {
    if groups.len() < 2 {
        return Err(AnalysisError::InvalidInput("one-way ANOVA needs at least 2 groups".into()));
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(AnalysisError::InvalidInput(format!(
            "group {i} has fewer than 2 observations"
        )));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("observations must be finite".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let sst: f64 = groups.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    f_test(ssb, ssw, sst, groups.len() - 1, n - groups.len())
}

/// Single-factor repeated-measures ANOVA on a participants × conditions
/// table; subject variance is removed from the error term.
pub fn rm_anova(table: &[Vec<f64>]) -> Result<AnovaResult, AnalysisError> {
    let n = table.len();
    if n < 2 {
        return Err(AnalysisError::InvalidInput("RM-ANOVA needs at least 2 participants".into()));
    }
    let k = table[0].len();
    if k < 2 {
        return Err(AnalysisError::InvalidInput("RM-ANOVA needs at least 2 conditions".into()));
    }
    if let Some(i) = table.iter().position(|r| r.len() != k) {
        return Err(AnalysisError::InvalidInput(format!(
            "participant row {i} has {} values, expected {k}",
            table[i].len()
        )));
    }
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("observations must be finite".into()));
    }
    let grand = table.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row_means: Vec<f64> = table.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ss_cond = n as f64 * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    let mut ss_total = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            ss_err += (v - row_means[i] - col_means[j] + grand).powi(2);
            ss_total += (v - grand).powi(2);
        }
    }
    f_test(ss_cond, ss_err, ss_total, k - 1, (n - 1) * (k - 1))
}

/// Every unordered pair of `ids`, in order.
pub fn all_pairs(ids: &[PatternId]) -> Vec<(PatternId, PatternId)> {
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            out.push((*a, *b));
        }
    }
    out
}

fn paired_t(x: &[f64], y: &[f64]) -> Result<(f64, f64), AnalysisError> {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = d.iter().map(|v| v * v).sum::<f64>();
    if var * (n - 1.0) <= SS_ZERO * scale {
        if m == 0.0 {
            return Ok((0.0, 1.0));
        }
        return Err(AnalysisError::ZeroVariance);
    }
    let t = m / (var / n).sqrt();
    Ok((t, t_two_sided_p(t, n - 1.0)))
}

/// Two-sided paired t-tests with one-step Bonferroni over `pairs`.
pub fn paired_t_bonferroni(
    samples: &BTreeMap<PatternId, Vec<f64>>,
    pairs: &[(PatternId, PatternId)],
) -> Result<Vec<PairwiseResult>, AnalysisError> {
    let m = pairs.len() as f64;
    pairs
        .iter()
        .map(|&(a, b)| {
            let x = samples.get(&a).ok_or(AnalysisError::MissingPattern(a))?;
            let y = samples.get(&b).ok_or(AnalysisError::MissingPattern(b))?;
            if x.len() != y.len() || x.len() < 2 {
                return Err(AnalysisError::InvalidInput(format!(
                    "{a} and {b} need paired samples of equal length ≥ 2 (got {} and {})",
                    x.len(),
                    y.len()
                )));
            }
            let (t, raw_p) = paired_t(x, y).map_err(|e| match e {
                AnalysisError::ZeroVariance => AnalysisError::ZeroVariancePair(a, b),
                other => other,
            })?;
            let corrected_p = (raw_p * m).min(1.0);
            Ok(PairwiseResult {
                pair: (a, b),
                t_statistic: t,
                raw_p,
                corrected_p,
                significant: corrected_p < ALPHA,
            })
        })
        .collect()
}
