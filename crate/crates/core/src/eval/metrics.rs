use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PdeCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub n: usize,
    pub overall_accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; 3],
    /// Accuracy over samples whose true label is 1 or 2; absent without any.
    pub damage_class_accuracy: Option<f64>,
    pub severity_score: f64,
    /// Recall of class 2; absent when class 2 never occurs in `y`.
    pub recall_2: Option<f64>,
}

fn check_lengths(y: &[PdeCategory], yhat: &[PdeCategory]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(())
}

/// Mean of 1 − |y − ŷ|/2.
pub fn severity_score(y: &[PdeCategory], yhat: &[PdeCategory]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let total: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| 1.0 - (a.value() as f64 - b.value() as f64).abs() / 2.0)
        .sum();
    Ok(total / y.len() as f64)
}

pub fn classification_metrics(
    y: &[PdeCategory],
    yhat: &[PdeCategory],
) -> Result<PredictionMetrics> {
    check_lengths(y, yhat)?;
    let mut confusion = [[0usize; 3]; 3];
    for (a, b) in y.iter().zip(yhat) {
        confusion[a.value() as usize][b.value() as usize] += 1;
    }
    let n = y.len();
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = [0.0; 3];
    for c in 0..3 {
        let tp = confusion[c][c] as f64;
        let fp: f64 = (0..3)
            .filter(|&r| r != c)
            .map(|r| confusion[r][c] as f64)
            .sum();
        let fn_: f64 = (0..3)
            .filter(|&p| p != c)
            .map(|p| confusion[c][p] as f64)
            .sum();
        let denom = 2.0 * tp + fp + fn_;
        per_class_f1[c] = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    let damage_total: usize = (1..3).map(|c| confusion[c].iter().sum::<usize>()).sum();
    let damage_correct = confusion[1][1] + confusion[2][2];
    let class2: usize = confusion[2].iter().sum();
    Ok(PredictionMetrics {
        n,
        overall_accuracy: correct as f64 / n as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / 3.0,
        per_class_f1,
        damage_class_accuracy: (damage_total > 0)
            .then(|| damage_correct as f64 / damage_total as f64),
        severity_score: severity_score(y, yhat)?,
        recall_2: (class2 > 0).then(|| confusion[2][2] as f64 / class2 as f64),
    })
}

/// Severity score per unit of per-sample cost.
pub fn efficiency(severity_score: f64, cost_idx: f64) -> Result<f64> {
    if cost_idx <= 0.0 || !cost_idx.is_finite() {
        return Err(Error::NonPositiveCost(cost_idx));
    }
    Ok(severity_score / cost_idx)
}

/// Linear-interpolation quantile (Hyndman–Fan type 7) of unsorted data.
pub fn quantile_type7(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}
