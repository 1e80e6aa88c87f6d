//! Online conformal p-values.
//!
//! Each new conformity score is ranked against every score seen so far
//! (itself included):
//!
//! ```text
//! p_n = (#{i <= n : a_i < a_n} + theta_n * #{i <= n : a_i = a_n}) / n
//! ```
//!
//! Under exchangeability, with `theta_n` IID uniform and independent of the
//! data, the p-values are IID uniform on `[0, 1]`. The tiebreak `theta_n` is
//! always supplied by the caller so that a stream can be replayed exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::OrderStatisticTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// 1-based position in the stream.
    pub index: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub index: u64,
    pub value: f64,
    pub tiebreak: f64,
}

/// All conformity scores seen so far on one stream.
#[derive(Debug, Clone, Default)]
pub struct RankState {
    scores: OrderStatisticTree,
}

impl RankState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of scores pushed so far.
    pub fn len(&self) -> u64 {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Inserts `score` and returns its conformal p-value.
    pub fn push_score(&mut self, score: f64, tiebreak: f64) -> Result<PValue> {
        if !score.is_finite() {
            return Err(Error::NonFiniteScore(score));
        }
        if !(0.0..=1.0).contains(&tiebreak) {
            return Err(Error::TiebreakOutOfRange(tiebreak));
        }
        self.scores.insert(score);
        let n = self.scores.len();
        let (less, equal) = self.scores.rank(score);
        let value = (less as f64 + tiebreak * equal as f64) / n as f64;
        Ok(PValue {
            index: n,
            value: value.clamp(0.0, 1.0),
            tiebreak,
        })
    }

    /// Pushes a record, checking that its index continues the stream.
    pub fn push_record(&mut self, record: ScoreRecord, tiebreak: f64) -> Result<PValue> {
        let expected = self.len() + 1;
        if record.index != expected {
            return Err(Error::invalid(format!(
                "score record index {} does not continue the stream (expected {expected})",
                record.index
            )));
        }
        self.push_score(record.score, tiebreak)
    }

    /// `(count strictly less, count equal)` among the scores seen so far.
    pub fn rank(&self, score: f64) -> (u64, u64) {
        self.scores.rank(score)
    }
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `values` and
/// the Uniform[0, 1] CDF.
pub fn ks_distance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("no p-values for the uniformity check"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i as f64 + 1.0) / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0_f64, f64::max);
    Ok(d)
}

pub fn uniformity_check(pvalues: &[PValue]) -> Result<f64> {
    let values: Vec<f64> = pvalues.iter().map(|p| p.value).collect();
    ks_distance(&values)
}
