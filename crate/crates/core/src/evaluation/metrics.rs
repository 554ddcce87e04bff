//! ROC sweep, AUC, fixed-rate operating points and Wilson intervals.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::AlertClass;

/// Cumulative counts when every window scoring at least `threshold` is
/// called an artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub n_pos: u64,
    pub n_neg: u64,
    /// Starts at (0, 0) with an infinite threshold and ends at (P, N).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl Roc {
    pub fn tpr(&self, p: &RocPoint) -> f64 {
        p.tp as f64 / self.n_pos as f64
    }

    pub fn fpr(&self, p: &RocPoint) -> f64 {
        p.fp as f64 / self.n_neg as f64
    }

    pub fn tnr(&self, p: &RocPoint) -> f64 {
        (self.n_neg - p.fp) as f64 / self.n_neg as f64
    }

    pub fn fnr(&self, p: &RocPoint) -> f64 {
        (self.n_pos - p.tp) as f64 / self.n_pos as f64
    }
}

/// Threshold sweep over the distinct scores, artifact as the positive class.
/// AUC is the trapezoid area, accumulated in integer counts so that it equals
/// the tie-corrected Mann-Whitney statistic exactly.
pub fn roc_and_auc(scores: &[f64], labels: &[AlertClass]) -> Result<Roc, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length { scores: scores.len(), labels: labels.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|c| c.is_artifact()).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, tp: 0, fp: 0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]].is_artifact() {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint { threshold: s, tp, fp });
    }
    let auc = area as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(Roc { n_pos, n_neg, points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints {
    pub fpr_at_50tpr: f64,
    pub fnr_at_50tnr: f64,
    pub tpr_at_1fpr: f64,
    pub tnr_at_1fnr: f64,
}

/// Best rate on the curve at each fixed target, read off the swept points
/// without interpolation. The mirrored pair treats real as the positive class.
pub fn operating_point_metrics(roc: &Roc) -> OperatingPoints {
    let (p, n) = (roc.n_pos, roc.n_neg);
    let pts = &roc.points;
    let fpr_at_50tpr = pts
        .iter()
        .filter(|q| 2 * q.tp >= p)
        .map(|q| roc.fpr(q))
        .fold(f64::INFINITY, f64::min);
    let tpr_at_1fpr = pts
        .iter()
        .filter(|q| 100 * q.fp <= n)
        .map(|q| roc.tpr(q))
        .fold(f64::NEG_INFINITY, f64::max);
    let fnr_at_50tnr = pts
        .iter()
        .filter(|q| 2 * (n - q.fp) >= n)
        .map(|q| roc.fnr(q))
        .fold(f64::INFINITY, f64::min);
    let tnr_at_1fnr = pts
        .iter()
        .filter(|q| 100 * (p - q.tp) <= p)
        .map(|q| roc.tnr(q))
        .fold(f64::NEG_INFINITY, f64::max);
    OperatingPoints { fpr_at_50tpr, fnr_at_50tnr, tpr_at_1fpr, tnr_at_1fnr }
}

/// Fraction of windows whose call at `threshold` matches the label. A score
/// equal to the threshold counts as real.
pub fn accuracy_at(scores: &[f64], labels: &[AlertClass], threshold: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, c)| (**s > threshold) == c.is_artifact())
        .count();
    hits as f64 / labels.len() as f64
}

pub const Z_95: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64), EvalError> {
    if n == 0 || successes > n {
        return Err(EvalError::Wilson { successes, n });
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}
