//! Confusion matrices from perception trials, recognition rates, and the
//! statistics used to compare patterns.

pub mod special;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::haptics::PatternId;

pub use stats::{all_pairs, one_way_anova, paired_t_bonferroni, rm_anova, AnovaResult, PairwiseResult, ALPHA};

/// Rows may drift from 1 by the two-decimal rounding of the source tables.
pub const ROW_SUM_TOLERANCE: f64 = 0.02;

pub const VOLAR_CSV: &str = include_str!("../../data/confusion_volar.csv");
pub const DORSAL_CSV: &str = include_str!("../../data/confusion_dorsal.csv");

pub const TRIALS_HEADER: &str = "participant,side,actual,perceived";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no trials with actual pattern {0}")]
    MissingPattern(PatternId),
    #[error("within-group variance is zero while between-group variance is not (F is infinite, p = 0)")]
    DegenerateVariance,
    #[error("all paired differences are identical and nonzero (t is infinite, p = 0)")]
    ZeroVariance,
    #[error("all paired differences for {0} vs {1} are identical and nonzero (t is infinite, p = 0)")]
    ZeroVariancePair(PatternId, PatternId),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid confusion matrix: {0}")]
    InvalidMatrix(String),
    #[error("{0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WristSide {
    Volar,
    Dorsal,
}

impl WristSide {
    pub fn as_str(self) -> &'static str {
        match self {
            WristSide::Volar => "volar",
            WristSide::Dorsal => "dorsal",
        }
    }
}

impl fmt::Display for WristSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WristSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "volar" => Ok(WristSide::Volar),
            "dorsal" => Ok(WristSide::Dorsal),
            other => Err(format!("unknown wrist side `{other}` (expected volar or dorsal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant_id: u32,
    pub wrist_side: WristSide,
    pub actual: PatternId,
    pub perceived: PatternId,
}

/// Parses `participant,side,actual,perceived` rows. A header line and blank
/// lines are skipped; the first malformed row aborts with its line number.
pub fn parse_trials(text: &str) -> Result<Vec<TrialRecord>, AnalysisError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() || (i == 0 && row.starts_with("participant")) {
            continue;
        }
        let bad = |message: String| AnalysisError::Malformed { line, message };
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", cells.len())));
        }
        let participant_id = cells[0]
            .parse()
            .map_err(|_| bad(format!("invalid participant id `{}`", cells[0])))?;
        let wrist_side = cells[1].parse().map_err(bad)?;
        let actual = cells[2].parse().map_err(|e: crate::haptics::ParsePatternError| bad(e.to_string()))?;
        let perceived = cells[3].parse().map_err(|e: crate::haptics::ParsePatternError| bad(e.to_string()))?;
        out.push(TrialRecord {
            participant_id,
            wrist_side,
            actual,
            perceived,
        });
    }
    Ok(out)
}

pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = format!("{TRIALS_HEADER}\n");
    for t in trials {
        out.push_str(&format!("{},{},{},{}\n", t.participant_id, t.wrist_side, t.actual, t.perceived));
    }
    out
}

/// Rows are actual patterns, columns perceived, both in [`PatternId::ALL`]
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    values: [[f64; 10]; 10],
}

impl ConfusionMatrix {
    pub fn new(values: [[f64; 10]; 10]) -> Result<Self, AnalysisError> {
        for (i, row) in values.iter().enumerate() {
            let id = PatternId::ALL[i];
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(AnalysisError::InvalidMatrix(format!("row {id}: entry {v} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE + 1e-9 {
                return Err(AnalysisError::InvalidMatrix(format!("row {id} sums to {sum:.4}")));
            }
        }
        Ok(Self { values })
    }

    pub fn identity() -> Self {
        let mut values = [[0.0; 10]; 10];
        for (i, row) in values.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { values }
    }

    pub fn get(&self, actual: PatternId, perceived: PatternId) -> f64 {
        self.values[actual.index()][perceived.index()]
    }

    pub fn row(&self, actual: PatternId) -> &[f64; 10] {
        &self.values[actual.index()]
    }

    pub fn values(&self) -> &[[f64; 10]; 10] {
        &self.values
    }

    /// Reads a matrix with a header of the ten pattern ids (optionally
    /// preceded by a label column) and one labeled row per actual pattern.
    pub fn from_csv(text: &str) -> Result<Self, AnalysisError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| AnalysisError::Malformed {
            line: 1,
            message: "empty matrix file".into(),
        })?;
        let head: Vec<&str> = header.split(',').map(str::trim).collect();
        let cols = match head.len() {
            11 => &head[1..],
            10 => &head[..],
            n => {
                return Err(AnalysisError::Malformed {
                    line: hline + 1,
                    message: format!("header has {n} fields, expected the ten pattern ids"),
                })
            }
        };
        let mut col_index = [0usize; 10];
        for (c, name) in cols.iter().enumerate() {
            let id: PatternId = name.parse().map_err(|e: crate::haptics::ParsePatternError| AnalysisError::Malformed {
                line: hline + 1,
                message: e.to_string(),
            })?;
            col_index[c] = id.index();
        }
        let mut seen = [false; 10];
        for &k in &col_index {
            if std::mem::replace(&mut seen[k], true) {
                return Err(AnalysisError::Malformed {
                    line: hline + 1,
                    message: "duplicate pattern in header".into(),
                });
            }
        }

        let mut values = [[f64::NAN; 10]; 10];
        let mut filled = [false; 10];
        for (row_no, (i, content)) in lines.enumerate() {
            let line = i + 1;
            let bad = |message: String| AnalysisError::Malformed { line, message };
            let cells: Vec<&str> = content.split(',').map(str::trim).collect();
            let (r, nums) = if cells.len() == 11 {
                let id: PatternId = cells[0]
                    .parse()
                    .map_err(|e: crate::haptics::ParsePatternError| bad(e.to_string()))?;
                (id.index(), &cells[1..])
            } else if cells.len() == 10 && row_no < 10 {
                (row_no, &cells[..])
            } else {
                return Err(bad(format!("expected 10 values, found {}", cells.len())));
            };
            if std::mem::replace(&mut filled[r], true) {
                return Err(bad(format!("duplicate row for {}", PatternId::ALL[r])));
            }
            for (c, cell) in nums.iter().enumerate() {
                values[r][col_index[c]] = cell
                    .parse()
                    .map_err(|_| bad(format!("invalid number `{cell}`")))?;
            }
        }
        if let Some(missing) = filled.iter().position(|f| !f) {
            return Err(AnalysisError::InvalidMatrix(format!(
                "missing row for {}",
                PatternId::ALL[missing]
            )));
        }
        Self::new(values)
    }

    pub fn to_csv(&self) -> String {
        let ids: Vec<String> = PatternId::ALL.iter().map(|p| p.to_string()).collect();
        let mut out = format!("actual,{}\n", ids.join(","));
        for (id, row) in ids.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&format!("{id},{}\n", cells.join(",")));
        }
        out
    }
}

pub fn bundled_matrix(side: WristSide) -> ConfusionMatrix {
    let text = match side {
        WristSide::Volar => VOLAR_CSV,
        WristSide::Dorsal => DORSAL_CSV,
    };
    ConfusionMatrix::from_csv(text).expect("bundled matrix is valid")
}

/// Row-normalized counts of `perceived` per `actual` for one wrist side.
pub fn confusion_from_trials(trials: &[TrialRecord], side: WristSide) -> Result<ConfusionMatrix, AnalysisError> {
    let mut counts = [[0u64; 10]; 10];
    for t in trials.iter().filter(|t| t.wrist_side == side) {
        counts[t.actual.index()][t.perceived.index()] += 1;
    }
    let mut values = [[0.0; 10]; 10];
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Err(AnalysisError::MissingPattern(PatternId::ALL[i]));
        }
        for (j, c) in row.iter().enumerate() {
            values[i][j] = *c as f64 / total as f64;
        }
    }
    Ok(ConfusionMatrix { values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecognitionRates {
    pub per_pattern: BTreeMap<PatternId, f64>,
    pub mean: f64,
}

pub fn recognition_rates(m: &ConfusionMatrix) -> RecognitionRates {
    let per_pattern: BTreeMap<PatternId, f64> = PatternId::ALL.iter().map(|p| (*p, m.get(*p, *p))).collect();
    let mean = per_pattern.values().sum::<f64>() / per_pattern.len() as f64;
    RecognitionRates { per_pattern, mean }
}

/// Per-participant recognition rate of each pattern, in
/// [`PatternId::ALL`] order. Participants missing a pattern are an error.
pub fn participant_rates(trials: &[TrialRecord], side: WristSide) -> Result<BTreeMap<u32, [f64; 10]>, AnalysisError> {
    let mut tallies: BTreeMap<u32, [(u32, u32); 10]> = BTreeMap::new();
    for t in trials.iter().filter(|t| t.wrist_side == side) {
        let slot = &mut tallies.entry(t.participant_id).or_insert([(0, 0); 10])[t.actual.index()];
        slot.1 += 1;
        if t.actual == t.perceived {
            slot.0 += 1;
        }
    }
    if tallies.is_empty() {
        return Err(AnalysisError::InvalidInput(format!("no {side} trials")));
    }
    tallies
        .into_iter()
        .map(|(pid, row)| {
            let mut rates = [0.0; 10];
            for (i, (hit, n)) in row.iter().enumerate() {
                if *n == 0 {
                    return Err(AnalysisError::InvalidInput(format!(
                        "participant {pid} has no trials for {}",
                        PatternId::ALL[i]
                    )));
                }
                rates[i] = *hit as f64 / *n as f64;
            }
            Ok((pid, rates))
        })
        .collect()
}

/// Draws perception trials whose expected confusion matrix is `m`.
pub fn synthesize_trials<R: Rng + ?Sized>(
    m: &ConfusionMatrix,
    side: WristSide,
    participants: u32,
    trials_per_pattern: u32,
    rng: &mut R,
) -> Vec<TrialRecord> {
    let samplers: Vec<WeightedIndex<f64>> = m
        .values
        .iter()
        .map(|row| WeightedIndex::new(row).expect("rows have positive mass"))
        .collect();
    let mut out = Vec::with_capacity((participants * trials_per_pattern * 10) as usize);
    for participant_id in 1..=participants {
        for (i, actual) in PatternId::ALL.iter().enumerate() {
            for _ in 0..trials_per_pattern {
                out.push(TrialRecord {
                    participant_id,
                    wrist_side: side,
                    actual: *actual,
                    perceived: PatternId::ALL[samplers[i].sample(rng)],
                });
            }
        }
    }
    out
}
