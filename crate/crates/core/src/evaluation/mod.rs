//! Leave-one-patient-out experiments over the four labeling strategies.

mod metrics;
mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{AlertType, AlertWindow};
use crate::data::AlertClass;
use crate::features::{
    feature_schema, fit_missingness_policy, Ablation, DenseMatrix, FeatureError, FeatureMatrix,
    MissingnessPolicy,
};
use crate::forest::{
    feature_importance, train_random_forest, ForestError, ForestHyper, ImportanceMode, TrainedForest,
};
use crate::label_model::{
    fit_label_model, majority_vote, posterior, to_crisp_labels, LabelModelError, LabelModelHyper,
    LabelModelParams, ProbabilisticLabel,
};
use crate::labeling::VoteMatrix;
use crate::seed::derive_seed;

pub use metrics::{
    accuracy_at, operating_point_metrics, roc_and_auc, wilson_interval, OperatingPoints, Roc,
    RocPoint, Z_95,
};
pub use report::{emit_report, render_plots, read_report, REPORT_FILE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 patients for leave-one-patient-out, got {0}")]
    TooFewPatients(usize),
    #[error("scores and labels must contain both classes")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(usize),
    #[error("wilson interval needs 0 <= successes <= n and n > 0, got {successes}/{n}")]
    Wilson { successes: u64, n: u64 },
    #[error("window table: {0}")]
    Table(String),
    #[error("fold `{patient}`, arm {arm}: {reason}")]
    Fold { patient: String, arm: String, reason: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    LabelModel(#[from] LabelModelError),
    #[error("report i/o at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Labeler {
    WeakSup,
    FullySup,
    MajorityVote,
    ProbLabels,
}

impl Labeler {
    pub fn as_str(self) -> &'static str {
        match self {
            Labeler::WeakSup => "WEAK_SUP",
            Labeler::FullySup => "FULLY_SUP",
            Labeler::MajorityVote => "MAJORITY_VOTE",
            Labeler::ProbLabels => "PROB_LABELS",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Labeler::WeakSup => "weak_sup",
            Labeler::FullySup => "fully_sup",
            Labeler::MajorityVote => "majority_vote",
            Labeler::ProbLabels => "prob_labels",
        }
    }

    pub fn has_forest(self) -> bool {
        self != Labeler::ProbLabels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExperimentArm {
    pub labeler: Labeler,
    pub ablation: Ablation,
}

impl ExperimentArm {
    pub fn new(labeler: Labeler, ablation: Ablation) -> Self {
        Self { labeler, ablation }
    }

    /// Every forest arm under both ablations, then the label-model posterior.
    pub fn default_set() -> Vec<ExperimentArm> {
        let mut arms = Vec::new();
        for ablation in Ablation::ALL {
            for l in [Labeler::WeakSup, Labeler::FullySup, Labeler::MajorityVote] {
                arms.push(Self::new(l, ablation));
            }
        }
        arms.push(Self::new(Labeler::ProbLabels, Ablation::WithWaveform));
        arms
    }

    pub fn name(&self) -> String {
        format!("{}/{}", self.labeler.as_str(), self.ablation.slug())
    }

    pub fn file_stem(&self, tau: AlertType) -> String {
        format!("{}_{}_{}", tau.slug(), self.labeler.slug(), self.ablation.slug())
    }
}

/// Per-window votes, features and ground truth for one alert type.
#[derive(Debug, Clone)]
pub struct WindowTable {
    pub tau: AlertType,
    pub windows: Vec<AlertWindow>,
    pub votes: VoteMatrix,
    /// Over the with-waveform schema.
    pub features: FeatureMatrix,
}

impl WindowTable {
    pub fn new(
        tau: AlertType,
        windows: Vec<AlertWindow>,
        votes: VoteMatrix,
        features: FeatureMatrix,
    ) -> Result<Self, EvalError> {
        let ids: Vec<String> = windows.iter().map(AlertWindow::row_id).collect();
        if votes.row_ids() != ids.as_slice() || features.row_ids != ids {
            return Err(EvalError::Table("votes, features and windows must share row order".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.tau != tau) {
            return Err(EvalError::Table(format!("window {} is not a {} alert", w.row_id(), tau.as_str())));
        }
        if features.names != feature_schema(tau, Ablation::WithWaveform) {
            return Err(EvalError::Table("features must use the with-waveform schema".into()));
        }
        Ok(Self { tau, windows, votes, features })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn truth(&self, rows: &[usize]) -> Result<Vec<AlertClass>, EvalError> {
        rows.iter()
            .map(|&i| {
                self.windows[i]
                    .y
                    .ok_or_else(|| EvalError::Table(format!("window {} has no label", self.windows[i].row_id())))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub patient_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per patient, ordered by patient id; a patient's windows (and so
/// every window of each of its events) form the test side.
pub fn lopo_folds(windows: &[AlertWindow]) -> Result<Vec<Fold>, EvalError> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_patient.entry(&w.patient_id).or_default().push(i);
    }
    if by_patient.len() < 2 {
        return Err(EvalError::TooFewPatients(by_patient.len()));
    }
    Ok(by_patient
        .into_iter()
        .map(|(p, test)| Fold {
            patient_id: p.to_string(),
            train: (0..windows.len()).filter(|i| windows[*i].patient_id != p).collect(),
            test,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub class_balance: f64,
    pub label_model: LabelModelHyper,
    pub forest: ForestHyper,
    pub seed: u64,
    /// Shuffles per feature for permutation importance.
    pub importance_repeats: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            class_balance: 0.26,
            label_model: LabelModelHyper::default(),
            forest: ForestHyper::default(),
            seed: 0,
            importance_repeats: 5,
        }
    }
}

const CRISP_THRESHOLD: f64 = 0.5;

fn arm_code(arm: &ExperimentArm) -> u64 {
    arm.labeler as u64 * 2 + arm.ablation as u64
}

/// Models fit on one fold's training rows, and their scores on its test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub label_model: LabelModelParams,
    pub policies: Vec<(Ablation, MissingnessPolicy)>,
    pub forests: Vec<(ExperimentArm, TrainedForest)>,
    pub test_scores: Vec<(ExperimentArm, Vec<f64>)>,
    /// Training rows that received a label, per arm.
    pub train_rows: Vec<(ExperimentArm, usize)>,
}

/// Training labels for a forest arm. Weak labelers drop uncovered rows.
fn train_labels(
    arm: &ExperimentArm,
    table: &WindowTable,
    train: &[usize],
    train_votes: &VoteMatrix,
    lm: &LabelModelParams,
    balance: f64,
) -> Result<(Vec<usize>, Vec<AlertClass>), EvalError> {
    let probs: Vec<ProbabilisticLabel> = match arm.labeler {
        Labeler::FullySup => return Ok((train.to_vec(), table.truth(train)?)),
        Labeler::WeakSup => (0..train.len())
            .map(|k| posterior(lm, &train_votes.row_ids()[k], train_votes.row(k)))
            .collect(),
        Labeler::MajorityVote => (0..train.len())
            .map(|k| majority_vote(&train_votes.row_ids()[k], train_votes.row(k), balance))
            .collect(),
        Labeler::ProbLabels => unreachable!("no forest for label-model scores"),
    };
    let crisp: BTreeMap<String, AlertClass> = to_crisp_labels(&probs, CRISP_THRESHOLD).into_iter().collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, &i) in train.iter().enumerate() {
        if let Some(c) = crisp.get(&train_votes.row_ids()[k]) {
            rows.push(i);
            labels.push(*c);
        }
    }
    Ok((rows, labels))
}

fn dense_for(table: &WindowTable, rows: &[usize], ablation: Ablation, policy: &MissingnessPolicy) -> Result<DenseMatrix, EvalError> {
    let m = table.features.select_rows(rows).select_columns(&feature_schema(table.tau, ablation))?;
    Ok(policy.apply(&m)?)
}

/// Fits everything one fold needs from its training rows only: the
/// missingness policy per ablation, the label model and one forest per arm.
pub fn fit_fold(
    table: &WindowTable,
    fold: &Fold,
    fold_index: usize,
    arms: &[ExperimentArm],
    settings: &ExperimentSettings,
) -> Result<FoldOutcome, EvalError> {
    let ctx = |arm: &str, e: &dyn std::fmt::Display| EvalError::Fold {
        patient: fold.patient_id.clone(),
        arm: arm.to_string(),
        reason: e.to_string(),
    };
    let train_votes = table.votes.select_rows(&fold.train);
    let lm = fit_label_model(&train_votes, settings.class_balance, &settings.label_model)
        .map_err(|e| ctx("label model", &e))?;

    let mut policies = Vec::new();
    for ablation in Ablation::ALL {
        if arms.iter().any(|a| a.ablation == ablation && a.labeler.has_forest()) {
            let train = table
                .features
                .select_rows(&fold.train)
                .select_columns(&feature_schema(table.tau, ablation))?;
            policies.push((ablation, fit_missingness_policy(&train).map_err(|e| ctx(ablation.slug(), &e))?));
        }
    }
    let policy = |ab: Ablation| &policies.iter().find(|(a, _)| *a == ab).expect("policy fitted").1;

    type ArmResult = Result<(Option<TrainedForest>, Vec<f64>, usize), EvalError>;
    let results: Vec<ArmResult> = arms
        .par_iter()
        .map(|arm| {
            if !arm.labeler.has_forest() {
                let test_votes = table.votes.select_rows(&fold.test);
                let scores = (0..fold.test.len())
                    .map(|k| posterior(&lm, "", test_votes.row(k)).p_artifact)
                    .collect();
                return Ok((None, scores, fold.train.len()));
            }
            let (rows, labels) =
                train_labels(arm, table, &fold.train, &train_votes, &lm, settings.class_balance)?;
            let p = policy(arm.ablation);
            let x = dense_for(table, &rows, arm.ablation, p)?;
            let seed = derive_seed(settings.seed, &[fold_index as u64, arm_code(arm)]);
            let forest = train_random_forest(&x, &labels, &settings.forest, seed)
                .map_err(|e| ctx(&arm.name(), &e))?;
            let scores = forest.predict_proba(&dense_for(table, &fold.test, arm.ablation, p)?)?;
            Ok((Some(forest), scores, rows.len()))
        })
        .collect();

    let mut forests = Vec::new();
    let mut test_scores = Vec::new();
    let mut train_rows = Vec::new();
    for (arm, r) in arms.iter().zip(results) {
        let (forest, scores, n) = r?;
        if let Some(f) = forest {
            forests.push((*arm, f));
        }
        test_scores.push((*arm, scores));
        train_rows.push((*arm, n));
    }
    Ok(FoldOutcome { label_model: lm, policies, forests, test_scores, train_rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    #[serde(flatten)]
    pub operating: OperatingPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    /// None for the origin, where nothing is called an artifact.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
    pub tpr_lo: f64,
    pub tpr_hi: f64,
    pub fnr: f64,
    pub tnr: f64,
    pub tnr_lo: f64,
    pub tnr_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub row_id: String,
    pub patient_id: String,
    pub y: AlertClass,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub patient_id: String,
    pub n_test: usize,
    pub n_train_labeled: usize,
    pub accuracy: f64,
    /// Absent when the held-out patient has a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSummary {
    pub n_trees: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub gi: Vec<(String, f64)>,
    pub pfi: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: ExperimentArm,
    pub metrics: Metrics,
    pub n_pos: u64,
    pub n_neg: u64,
    pub roc: Vec<RocRow>,
    pub scores: Vec<ScoredWindow>,
    pub folds: Vec<FoldMetrics>,
    /// Forest fit on every window with the arm's labels; none for label-model scores.
    pub forest: Option<ForestSummary>,
    pub importance: Option<Importance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tau: AlertType,
    pub seed: u64,
    pub n_patients: usize,
    pub n_windows: usize,
    pub n_artifact: usize,
    pub arms: Vec<ArmReport>,
}

impl EvaluationReport {
    pub fn arm(&self, labeler: Labeler, ablation: Ablation) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == ExperimentArm::new(labeler, ablation))
    }
}

fn roc_rows(roc: &Roc) -> Result<Vec<RocRow>, EvalError> {
    roc.points
        .iter()
        .map(|p| {
            let (tpr_lo, tpr_hi) = wilson_interval(p.tp, roc.n_pos, Z_95)?;
            let (tnr_lo, tnr_hi) = wilson_interval(roc.n_neg - p.fp, roc.n_neg, Z_95)?;
            Ok(RocRow {
                threshold: p.threshold.is_finite().then_some(p.threshold),
                fpr: roc.fpr(p),
                tpr: roc.tpr(p),
                tpr_lo,
                tpr_hi,
                fnr: roc.fnr(p),
                tnr: roc.tnr(p),
                tnr_lo,
                tnr_hi,
            })
        })
        .collect()
}

/// Forest on every window with the arm's labels, for importance rankings.
/// PFI is measured against ground truth.
fn full_data_importance(
    table: &WindowTable,
    arm: &ExperimentArm,
    settings: &ExperimentSettings,
) -> Result<(ForestSummary, Importance), EvalError> {
    let all: Vec<usize> = (0..table.len()).collect();
    let lm = fit_label_model(&table.votes, settings.class_balance, &settings.label_model)?;
    let (rows, labels) = train_labels(arm, table, &all, &table.votes, &lm, settings.class_balance)?;
    let schema_train = table.features.select_rows(&rows).select_columns(&feature_schema(table.tau, arm.ablation))?;
    let policy = fit_missingness_policy(&schema_train)?;
    let x = policy.apply(&schema_train)?;
    let seed = derive_seed(settings.seed, &[u64::MAX, arm_code(arm)]);
    let forest = train_random_forest(&x, &labels, &settings.forest, seed)?;
    let eval_x = dense_for(table, &all, arm.ablation, &policy)?;
    let truth = table.truth(&all)?;
    let gi = feature_importance(&forest, &eval_x, &truth, ImportanceMode::Gi, 0, seed)?;
    let pfi = feature_importance(&forest, &eval_x, &truth, ImportanceMode::Pfi, settings.importance_repeats, seed)?;
    let summary = ForestSummary { n_trees: forest.trees.len(), max_depth: forest.max_depth() };
    Ok((summary, Importance { gi, pfi }))
}

/// Runs every arm under leave-one-patient-out and pools the held-out scores.
pub fn run_experiment(
    table: &WindowTable,
    arms: &[ExperimentArm],
    settings: &ExperimentSettings,
) -> Result<EvaluationReport, EvalError> {
    let folds = lopo_folds(&table.windows)?;
    let truth = table.truth(&(0..table.len()).collect::<Vec<_>>())?;
    let outcomes: Vec<FoldOutcome> = folds
        .par_iter()
        .enumerate()
        .map(|(k, f)| fit_fold(table, f, k, arms, settings))
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::new();
    for (a, arm) in arms.iter().enumerate() {
        let mut pooled = vec![f64::NAN; table.len()];
        let mut fold_metrics = Vec::new();
        for (fold, out) in folds.iter().zip(&outcomes) {
            let scores = &out.test_scores[a].1;
            for (&i, &s) in fold.test.iter().zip(scores) {
                pooled[i] = s;
            }
            let y: Vec<AlertClass> = fold.test.iter().map(|&i| truth[i]).collect();
            let n_train_labeled = out.train_rows[a].1;
            fold_metrics.push(FoldMetrics {
                patient_id: fold.patient_id.clone(),
                n_test: fold.test.len(),
                n_train_labeled,
                accuracy: accuracy_at(scores, &y, CRISP_THRESHOLD),
                auc: roc_and_auc(scores, &y).ok().map(|r| r.auc),
            });
        }
        let roc = roc_and_auc(&pooled, &truth)?;
        let metrics = Metrics {
            accuracy: accuracy_at(&pooled, &truth, CRISP_THRESHOLD),
            auc: roc.auc,
            operating: operating_point_metrics(&roc),
        };
        let (forest, importance) = if arm.labeler.has_forest() {
            let (s, imp) = full_data_importance(table, arm, settings)?;
            (Some(s), Some(imp))
        } else {
            (None, None)
        };
        let scores = table
            .windows
            .iter()
            .zip(&pooled)
            .zip(&truth)
            .map(|((w, s), y)| ScoredWindow {
                row_id: w.row_id(),
                patient_id: w.patient_id.clone(),
                y: *y,
                score: *s,
            })
            .collect();
        reports.push(ArmReport {
            arm: *arm,
            metrics,
            n_pos: roc.n_pos,
            n_neg: roc.n_neg,
            roc: roc_rows(&roc)?,
            scores,
            folds: fold_metrics,
            forest,
            importance,
        });
    }
    Ok(EvaluationReport {
        tau: table.tau,
        seed: settings.seed,
        n_patients: folds.len(),
        n_windows: table.len(),
        n_artifact: truth.iter().filter(|c| c.is_artifact()).count(),
        arms: reports,
    })
}
