//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vitalws::data::AlertClass;
use vitalws::evaluation::OperatingPoints;
use vitalws::label_model::LabelModelParams;
use vitalws::labeling::{Vote, VoteMatrix};

pub const VOTES: [Vote; 3] = [Vote::Abstain, Vote::Real, Vote::Artifact];

pub fn psi(v: Vote, y: usize, a: f64, p: f64) -> f64 {
    let agree = matches!((v, y), (Vote::Real, 0) | (Vote::Artifact, 1));
    (a * agree as u8 as f64 + p * v.is_vote() as u8 as f64).exp()
}

/// Joint model by exhaustive enumeration: Z(y) sums the unnormalized product
/// over all 3^m vote configurations.
pub fn brute_row_prob(p: &LabelModelParams, row: &[Vote]) -> [f64; 2] {
    let m = row.len();
    let mut out = [0.0; 2];
    for (y, o) in out.iter_mut().enumerate() {
        let mut z = 0.0;
        for code in 0..3usize.pow(m as u32) {
            let mut c = code;
            let mut prod = 1.0;
            for j in 0..m {
                prod *= psi(VOTES[c % 3], y, p.theta_acc[j], p.theta_prop[j]);
                c /= 3;
            }
            z += prod;
        }
        let prior = if y == 1 { p.class_balance } else { 1.0 - p.class_balance };
        let num: f64 = (0..m).map(|j| psi(row[j], y, p.theta_acc[j], p.theta_prop[j])).product();
        *o = prior * num / z;
    }
    out
}

pub fn random_params(rng: &mut ChaCha8Rng, m: usize) -> LabelModelParams {
    LabelModelParams {
        theta_acc: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        theta_prop: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        class_balance: rng.random_range(0.05..0.95),
        lf_names: (0..m).map(|j| format!("lf{j}")).collect(),
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> VoteMatrix {
    VoteMatrix::from_rows(
        (0..m).map(|j| format!("lf{j}")).collect(),
        (0..n)
            .map(|i| (format!("r{i}"), (0..m).map(|_| VOTES[rng.random_range(0..3)]).collect()))
            .collect(),
    )
    .unwrap()
}

/// Coarse score grid so ties are common.
pub fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<AlertClass>) {
    loop {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=30);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<AlertClass> = scores
            .iter()
            .map(|s| AlertClass::from_u8((rng.random::<f64>() < 0.3 + 0.4 * s) as u8).unwrap())
            .collect();
        if labels.iter().any(|c| c.is_artifact()) && labels.iter().any(|c| !c.is_artifact()) {
            return (scores, labels);
        }
    }
}

/// Pairwise count: artifact above real scores 2, ties score 1.
pub fn mann_whitney(scores: &[f64], labels: &[AlertClass]) -> f64 {
    let mut num: u128 = 0;
    let (mut p, mut n) = (0u128, 0u128);
    for (i, a) in labels.iter().enumerate() {
        if a.is_artifact() {
            p += 1;
        } else {
            n += 1;
        }
        for (j, b) in labels.iter().enumerate() {
            if a.is_artifact() && !b.is_artifact() {
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    num as f64 / (2 * p * n) as f64
}

/// Every candidate threshold (each score plus "above all"), counted directly.
pub fn brute_operating_points(scores: &[f64], labels: &[AlertClass]) -> OperatingPoints {
    let p = labels.iter().filter(|c| c.is_artifact()).count() as f64;
    let n = labels.len() as f64 - p;
    let mut cands: Vec<f64> = scores.to_vec();
    cands.push(f64::INFINITY);
    let mut op = OperatingPoints {
        fpr_at_50tpr: f64::INFINITY,
        fnr_at_50tnr: f64::INFINITY,
        tpr_at_1fpr: f64::NEG_INFINITY,
        tnr_at_1fnr: f64::NEG_INFINITY,
    };
    for t in cands {
        let tp = scores.iter().zip(labels).filter(|(s, c)| **s >= t && c.is_artifact()).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, c)| **s >= t && !c.is_artifact()).count() as f64;
        let (tpr, fpr, tnr, fnr) = (tp / p, fp / n, (n - fp) / n, (p - tp) / p);
        if tpr >= 0.5 {
            op.fpr_at_50tpr = op.fpr_at_50tpr.min(fpr);
        }
        if fpr <= 0.01 {
            op.tpr_at_1fpr = op.tpr_at_1fpr.max(tpr);
        }
        if tnr >= 0.5 {
            op.fnr_at_50tnr = op.fnr_at_50tnr.min(fnr);
        }
        if fnr <= 0.01 {
            op.tnr_at_1fnr = op.tnr_at_1fnr.max(tnr);
        }
    }
    op
}

pub fn wilson_direct(k: u64, n: u64, z: f64) -> (f64, f64) {
    let p = k as f64 / n as f64;
    let n = n as f64;
    let c = (2.0 * n * p + z * z) / (2.0 * (n + z * z));
    let h = z * (z * z + 4.0 * n * p * (1.0 - p)).sqrt() / (2.0 * (n + z * z));
    (c - h, c + h)
}
