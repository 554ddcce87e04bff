//! Generative label model over labeling-function votes.
//!
//! Each function j has an accuracy weight `theta_acc[j]` and a propensity
//! weight `theta_prop[j]`. Given the true class y, votes are independent with
//!
//! ```text
//! P(vote_j = v | y) = exp(theta_acc[j] * [v = y] + theta_prop[j] * [v != abstain]) / Z_j
//! Z_j = 1 + exp(theta_acc[j] + theta_prop[j]) + exp(theta_prop[j])
//! ```
//!
//! `Z_j` does not depend on y, so propensities drop out of the posterior.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AlertClass;
use crate::labeling::{Vote, VoteMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelModelError {
    #[error("vote matrix has no rows")]
    EmptyMatrix,
    #[error("vote matrix has no labeling functions")]
    NoLabelingFunctions,
    #[error("class balance must lie in (0, 1), got {0}")]
    ClassBalance(f64),
    #[error("parameter count {got} does not match {expected} labeling functions")]
    Shape { got: usize, expected: usize },
    #[error("label model diverged at epoch {epoch}: loss {loss}, max |theta| {max_theta}")]
    Diverged { epoch: usize, loss: f64, max_theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams {
    pub theta_acc: Vec<f64>,
    pub theta_prop: Vec<f64>,
    /// Prior probability of the artifact class.
    pub class_balance: f64,
    pub lf_names: Vec<String>,
}

impl LabelModelParams {
    pub fn zeros(lf_names: Vec<String>, class_balance: f64) -> Result<Self, LabelModelError> {
        check_balance(class_balance)?;
        let m = lf_names.len();
        Ok(Self { theta_acc: vec![0.0; m], theta_prop: vec![0.0; m], class_balance, lf_names })
    }

    pub fn n_lfs(&self) -> usize {
        self.theta_acc.len()
    }

    fn check(&self, m: usize) -> Result<(), LabelModelError> {
        check_balance(self.class_balance)?;
        for got in [self.theta_acc.len(), self.theta_prop.len()] {
            if got != m {
                return Err(LabelModelError::Shape { got, expected: m });
            }
        }
        Ok(())
    }
}

fn check_balance(b: f64) -> Result<(), LabelModelError> {
    if b > 0.0 && b < 1.0 {
        Ok(())
    } else {
        Err(LabelModelError::ClassBalance(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelModelHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LabelModelHyper {
    fn default() -> Self {
        Self { lr: 0.5, epochs: 1000, l2: 1e-4 }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn class_vote(y: usize) -> Vote {
    if y == 0 {
        Vote::Real
    } else {
        Vote::Artifact
    }
}

/// Negative log marginal likelihood summed over rows, and its gradient
/// ordered as `[d/d theta_acc..., d/d theta_prop...]`.
pub fn marginal_nll(
    params: &LabelModelParams,
    m: &VoteMatrix,
) -> Result<(f64, Vec<f64>), LabelModelError> {
    let k = m.n_lfs();
    if k == 0 {
        return Err(LabelModelError::NoLabelingFunctions);
    }
    if m.n_rows() == 0 {
        return Err(LabelModelError::EmptyMatrix);
    }
    params.check(k)?;
    let log_prior = [(1.0 - params.class_balance).ln(), params.class_balance.ln()];
    // Per-function log normalizer and model probabilities of "agree" and "vote".
    let mut log_z_sum = 0.0;
    let mut p_agree = vec![0.0; k];
    let mut p_vote = vec![0.0; k];
    for j in 0..k {
        let (a, p) = (params.theta_acc[j], params.theta_prop[j]);
        let lz = log_sum_exp(&[0.0, a + p, p]);
        log_z_sum += lz;
        p_agree[j] = (a + p - lz).exp();
        p_vote[j] = p_agree[j] + (p - lz).exp();
    }

    let mut nll = 0.0;
    let mut grad = vec![0.0; 2 * k];
    for row in m.rows() {
        let mut score = [log_prior[0] - log_z_sum, log_prior[1] - log_z_sum];
        for (y, s) in score.iter_mut().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v.is_vote() {
                    *s += params.theta_prop[j];
                    if v == class_vote(y) {
                        *s += params.theta_acc[j];
                    }
                }
            }
        }
        let lse = log_sum_exp(&score);
        nll -= lse;
        let q = [(score[0] - lse).exp(), (score[1] - lse).exp()];
        for (j, &v) in row.iter().enumerate() {
            let agree = match v {
                Vote::Real => q[0],
                Vote::Artifact => q[1],
                Vote::Abstain => 0.0,
            };
            grad[j] -= agree - p_agree[j];
            grad[k + j] -= (v.is_vote() as u8 as f64) - p_vote[j];
        }
    }
    Ok((nll, grad))
}

/// Full-batch gradient descent from zero on the mean negative log marginal
/// likelihood plus `l2 * |theta|^2`.
///
/// A function that never votes in `m` carries no information about its
/// accuracy; only the normalizer would move its weight, so that weight is held
/// at zero instead of drifting to a spurious negative value.
pub fn fit_label_model(
    m: &VoteMatrix,
    class_balance: f64,
    hyper: &LabelModelHyper,
) -> Result<LabelModelParams, LabelModelError> {
    let mut params = LabelModelParams::zeros(m.lf_names().to_vec(), class_balance)?;
    let k = m.n_lfs();
    if k == 0 {
        return Err(LabelModelError::NoLabelingFunctions);
    }
    if m.n_rows() == 0 {
        return Err(LabelModelError::EmptyMatrix);
    }
    let n = m.n_rows() as f64;
    let votes_somewhere: Vec<bool> = (0..k).map(|j| m.rows().any(|r| r[j].is_vote())).collect();
    for epoch in 0..hyper.epochs {
        let (nll, grad) = marginal_nll(&params, m)?;
        let reg: f64 = params.theta_acc.iter().chain(&params.theta_prop).map(|t| t * t).sum();
        let loss = nll / n + hyper.l2 * reg;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let max_theta = params
                .theta_acc
                .iter()
                .chain(&params.theta_prop)
                .fold(0.0f64, |a, t| a.max(t.abs()));
            return Err(LabelModelError::Diverged { epoch, loss, max_theta });
        }
        for j in 0..k {
            let ga = grad[j] / n + 2.0 * hyper.l2 * params.theta_acc[j];
            let gp = grad[k + j] / n + 2.0 * hyper.l2 * params.theta_prop[j];
            if votes_somewhere[j] {
                params.theta_acc[j] -= hyper.lr * ga;
            }
            params.theta_prop[j] -= hyper.lr * gp;
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticLabel {
    pub row_id: String,
    pub p_artifact: f64,
    pub covered: bool,
}

impl ProbabilisticLabel {
    /// Artifact iff `p_artifact > threshold`; exact ties follow `tie`.
    pub fn crisp(&self, threshold: f64, tie: TieRule) -> AlertClass {
        if self.p_artifact > threshold {
            AlertClass::Artifact
        } else if self.p_artifact < threshold {
            AlertClass::Real
        } else {
            match tie {
                TieRule::Real => AlertClass::Real,
                TieRule::Artifact => AlertClass::Artifact,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    #[default]
    Real,
    Artifact,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn posterior(params: &LabelModelParams, row_id: &str, row: &[Vote]) -> ProbabilisticLabel {
    let b = params.class_balance;
    let mut logit = b.ln() - (1.0 - b).ln();
    let mut covered = false;
    for (j, &v) in row.iter().enumerate() {
        match v {
            Vote::Artifact => logit += params.theta_acc[j],
            Vote::Real => logit -= params.theta_acc[j],
            Vote::Abstain => continue,
        }
        covered = true;
    }
    ProbabilisticLabel { row_id: row_id.to_string(), p_artifact: sigmoid(logit), covered }
}

pub fn posteriors(params: &LabelModelParams, m: &VoteMatrix) -> Vec<ProbabilisticLabel> {
    (0..m.n_rows()).map(|i| posterior(params, &m.row_ids()[i], m.row(i))).collect()
}

/// Fraction of artifact votes among non-abstaining functions. An uncovered
/// row falls back to the class prior.
pub fn majority_vote(row_id: &str, row: &[Vote], class_balance: f64) -> ProbabilisticLabel {
    let art = row.iter().filter(|v| **v == Vote::Artifact).count();
    let real = row.iter().filter(|v| **v == Vote::Real).count();
    let covered = art + real > 0;
    let p_artifact = if covered { art as f64 / (art + real) as f64 } else { class_balance };
    ProbabilisticLabel { row_id: row_id.to_string(), p_artifact, covered }
}

/// Drops uncovered rows and thresholds the rest; `p == threshold` is real.
pub fn to_crisp_labels(probs: &[ProbabilisticLabel], threshold: f64) -> Vec<(String, AlertClass)> {
    probs
        .iter()
        .filter(|p| p.covered)
        .map(|p| (p.row_id.clone(), p.crisp(threshold, TieRule::Real)))
        .collect()
}
