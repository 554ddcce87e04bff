//! Record-to-table plumbing: detection, windowing, votes and features, one
//! patient at a time so that only one record is in memory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{detect_alert_events, windows_from_event, AlertCriteria, AlertError, AlertType, AlertWindow};
use crate::data::{
    list_patient_manifests, load_patient_record, read_labels, slice_window, AlertClass, DataError, GroundTruthLabel,
    PatientRecord,
};
use crate::dsp::{derive_estimates, DspConfig};
use crate::config::{ConfigError, ExperimentConfig};
use crate::evaluation::{
    emit_report, fit_fold, run_experiment, EvalError, EvaluationReport, ExperimentArm, Fold, Labeler, WindowTable,
};
use crate::features::{extract_features, feature_schema, Ablation, FeatureMatrix, FeatureVector};
use crate::labeling::{lf_suite, LabelingError, LabelingFunction, LfConfig, Vote, VoteMatrix, WindowContext};
use crate::synth::{generate_patient, CohortSpec, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Alert(#[from] AlertError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no labeled {0} alerts to evaluate")]
    NoWindows(AlertType),
}

pub const RESOLVED_CONFIG_FILE: &str = "config.json";

/// Everything that shapes windows, votes and features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSettings {
    pub criteria: AlertCriteria,
    pub lf: LfConfig,
    pub dsp: DspConfig,
}

/// Windows of every detected event of one type. Events get their label from
/// `labels` when it has one.
pub fn detect_windows(
    record: &PatientRecord,
    tau: AlertType,
    criteria: &AlertCriteria,
    labels: &HashMap<String, AlertClass>,
) -> Result<Vec<AlertWindow>, AlertError> {
    let mut out = Vec::new();
    for mut ev in detect_alert_events(record, tau, criteria)? {
        ev.y = labels.get(&ev.pid).copied();
        out.extend(windows_from_event(&ev));
    }
    Ok(out)
}

/// Votes and features for windows of one record, in window order.
pub fn window_rows(
    record: &PatientRecord,
    windows: &[AlertWindow],
    lfs: &[LabelingFunction],
    dsp: &DspConfig,
) -> Vec<(Vec<Vote>, FeatureVector)> {
    windows
        .par_iter()
        .map(|w| {
            let view = slice_window(record, w.start, w.duration);
            let derived = derive_estimates(&view, dsp);
            let ctx = WindowContext { window: w, view, derived };
            let votes = lfs.iter().map(|lf| lf.evaluate(&ctx)).collect();
            (votes, extract_features(&ctx, w.tau))
        })
        .collect()
}

/// Accumulates labeled windows of one alert type across patients.
pub struct TableBuilder {
    tau: AlertType,
    lfs: Vec<LabelingFunction>,
    windows: Vec<AlertWindow>,
    votes: VoteMatrix,
    features: Vec<FeatureVector>,
    keep_unlabeled: bool,
    /// Windows without a label: skipped, or kept when `keep_unlabeled`.
    pub unlabeled: usize,
}

impl TableBuilder {
    pub fn new(tau: AlertType, lf: &LfConfig) -> Result<Self, PipelineError> {
        let lfs = lf_suite(tau, lf);
        let votes = VoteMatrix::new(lfs.iter().map(|l| l.name().to_string()).collect())?;
        Ok(Self { tau, lfs, windows: Vec::new(), votes, features: Vec::new(), keep_unlabeled: false, unlabeled: 0 })
    }

    /// Keeps windows that have no label instead of skipping them.
    pub fn keep_unlabeled(mut self) -> Self {
        self.keep_unlabeled = true;
        self
    }

    pub fn add_patient(
        &mut self,
        record: &PatientRecord,
        labels: &HashMap<String, AlertClass>,
        settings: &WindowSettings,
    ) -> Result<(), PipelineError> {
        let keep = self.keep_unlabeled;
        let (windows, skipped): (Vec<_>, Vec<_>) = detect_windows(record, self.tau, &settings.criteria, labels)?
            .into_iter()
            .partition(|w| keep || w.y.is_some());
        self.unlabeled += skipped.len() + windows.iter().filter(|w| w.y.is_none()).count();
        for (w, (votes, fv)) in windows.iter().zip(window_rows(record, &windows, &self.lfs, &settings.dsp)) {
            self.votes.push_row(w.row_id(), &votes)?;
            self.features.push(fv);
        }
        self.windows.extend(windows);
        Ok(())
    }

    pub fn finish(self) -> Result<WindowTable, PipelineError> {
        if self.windows.is_empty() {
            return Err(PipelineError::NoWindows(self.tau));
        }
        let features = FeatureMatrix::from_vectors(feature_schema(self.tau, Ablation::WithWaveform), &self.features);
        Ok(WindowTable::new(self.tau, self.windows, self.votes, features)?)
    }
}

fn label_map(labels: &[GroundTruthLabel]) -> HashMap<String, AlertClass> {
    labels.iter().map(|l| (l.event_id.clone(), l.y)).collect()
}

fn builders(taus: &[AlertType], lf: &LfConfig, keep_unlabeled: bool) -> Result<Vec<TableBuilder>, PipelineError> {
    taus.iter()
        .map(|&t| {
            let b = TableBuilder::new(t, lf)?;
            Ok(if keep_unlabeled { b.keep_unlabeled() } else { b })
        })
        .collect()
}

/// Tables for each alert type, generating one synthetic patient at a time.
pub fn tables_from_synth(
    spec: &CohortSpec,
    taus: &[AlertType],
    settings: &WindowSettings,
) -> Result<Vec<WindowTable>, PipelineError> {
    spec.validate()?;
    let mut builders = builders(taus, &settings.lf, false)?;
    for i in 0..spec.n_patients {
        let p = generate_patient(spec, i)?;
        let labels = label_map(&p.labels);
        for b in &mut builders {
            b.add_patient(&p.record, &labels, settings)?;
        }
    }
    builders.into_iter().map(TableBuilder::finish).collect()
}

/// Tables for each alert type from a manifest tree and its labels. Without
/// `keep_unlabeled`, events missing from `labels` are skipped.
pub fn tables_from_dir(
    data_dir: &Path,
    labels: &[GroundTruthLabel],
    taus: &[AlertType],
    settings: &WindowSettings,
    keep_unlabeled: bool,
) -> Result<Vec<WindowTable>, PipelineError> {
    let labels = label_map(labels);
    let mut builders = builders(taus, &settings.lf, keep_unlabeled)?;
    for manifest in list_patient_manifests(data_dir)? {
        let record = load_patient_record(&manifest)?;
        for b in &mut builders {
            b.add_patient(&record, &labels, settings)?;
        }
    }
    builders.into_iter().map(TableBuilder::finish).collect()
}

/// Tables for every configured alert type, from `synth` or `data_dir`.
/// Evaluation needs `require_labels`; a data directory without a labels file
/// is accepted otherwise.
pub fn build_tables(cfg: &ExperimentConfig, require_labels: bool) -> Result<Vec<WindowTable>, PipelineError> {
    cfg.validate()?;
    let settings = cfg.window_settings();
    match (&cfg.synth, &cfg.data_dir) {
        (Some(spec), _) => tables_from_synth(spec, &cfg.tau, &settings),
        (None, Some(dir)) => {
            let path = cfg.labels_path().expect("data_dir is set");
            let labels = if require_labels || path.exists() { read_labels(&path)? } else { Vec::new() };
            tables_from_dir(dir, &labels, &cfg.tau, &settings, !require_labels)
        }
        (None, None) => unreachable!("validated"),
    }
}

pub fn run_evaluation(cfg: &ExperimentConfig) -> Result<Vec<EvaluationReport>, PipelineError> {
    let settings = cfg.experiment_settings()?;
    build_tables(cfg, true)?
        .iter()
        .map(|t| run_experiment(t, &cfg.arms, &settings).map_err(PipelineError::from))
        .collect()
}

/// Full experiment into `out_dir`, with the resolved config saved beside the
/// report so the bundle can be rerun as is.
pub fn evaluate_to_dir(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let mut resolved = cfg.clone();
    resolved.seed = Some(cfg.resolve_seed()?);
    let reports = run_evaluation(&resolved)?;
    let mut files = emit_report(&reports, &cfg.out_dir)?;
    let path = cfg.out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, resolved.to_json() + "\n").map_err(|source| DataError::Io { path: path.clone(), source })?;
    files.push(path);
    Ok(files)
}

/// Label model and forests fit on every window, one set per alert type,
/// written as JSON into `out_dir`. The fully supervised arm is skipped when
/// some window has no ground truth.
pub fn train_to_dir(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let settings = cfg.experiment_settings()?;
    let mut files = Vec::new();
    fs::create_dir_all(&cfg.out_dir).map_err(|source| DataError::Io { path: cfg.out_dir.clone(), source })?;
    let write = |name: String, text: String, files: &mut Vec<PathBuf>| -> Result<(), PipelineError> {
        let path = cfg.out_dir.join(name);
        fs::write(&path, text + "\n").map_err(|source| DataError::Io { path: path.clone(), source })?;
        files.push(path);
        Ok(())
    };
    for table in build_tables(cfg, false)? {
        let labeled = table.windows.iter().all(|w| w.y.is_some());
        let arms: Vec<ExperimentArm> = cfg
            .arms
            .iter()
            .copied()
            .filter(|a| a.labeler.has_forest() && (labeled || a.labeler != Labeler::FullySup))
            .collect();
        let fold = Fold { patient_id: String::new(), train: (0..table.len()).collect(), test: Vec::new() };
        let out = fit_fold(&table, &fold, 0, &arms, &settings)?;
        let tau = table.tau.slug();
        write(format!("{tau}_label_model.json"), pretty(&out.label_model), &mut files)?;
        for (ablation, policy) in &out.policies {
            write(format!("{tau}_{}_missingness.json", ablation.slug()), pretty(policy), &mut files)?;
        }
        for (arm, forest) in &out.forests {
            write(format!("{}_forest.json", arm.file_stem(table.tau)), forest.to_json(), &mut files)?;
        }
    }
    Ok(files)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("model serializes")
}
