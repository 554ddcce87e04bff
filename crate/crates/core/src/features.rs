//! Window featurization and the missing-value policy for the end model.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::AlertType;
use crate::data::{ChannelId, ChannelKind};
use crate::dsp::quantile_sorted;
use crate::labeling::WindowContext;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("schema mismatch: expected {expected} columns, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature csv line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("feature csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Whether waveform-derived features reach the end model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ablation {
    WithWaveform,
    WithoutWaveform,
}

impl Ablation {
    pub const ALL: [Ablation; 2] = [Ablation::WithWaveform, Ablation::WithoutWaveform];

    pub fn slug(self) -> &'static str {
        match self {
            Ablation::WithWaveform => "with_waveform",
            Ablation::WithoutWaveform => "without_waveform",
        }
    }
}

pub const AGGREGATES: [&str; 7] = ["mean", "std", "kurt", "skew", "med", "q1", "q3"];

/// Raw channels whose samples feed features for an alert type.
pub fn feature_channels(tau: AlertType) -> Vec<ChannelId> {
    let excluded: &[ChannelId] = match tau {
        AlertType::Rr => &[ChannelId::Art, ChannelId::PlethT, ChannelId::EcgIII, ChannelId::Spo2T],
        AlertType::Spo2 => &[ChannelId::Art],
    };
    ChannelId::ALL.into_iter().filter(|c| !excluded.contains(c)).collect()
}

/// Derived feature names and the channel each is computed from.
const DERIVED: [(&str, ChannelId); 17] = [
    ("respFFT", ChannelId::Resp),
    ("respNK1", ChannelId::Resp),
    ("respExt", ChannelId::Resp),
    ("respHeight", ChannelId::Resp),
    ("plethRR", ChannelId::Pleth),
    ("plethFFT", ChannelId::Pleth),
    ("plethNK1", ChannelId::Pleth),
    ("plethINT", ChannelId::Pleth),
    ("plethHeight", ChannelId::Pleth),
    ("pulsatility", ChannelId::Pleth),
    ("plethTFFT", ChannelId::PlethT),
    ("plethTNK1", ChannelId::PlethT),
    ("plethTINT", ChannelId::PlethT),
    ("plethTHeight", ChannelId::PlethT),
    ("pulsatilityT", ChannelId::PlethT),
    ("ecg2HR", ChannelId::EcgII),
    ("ecg3HR", ChannelId::EcgIII),
];

/// Ordered feature names for an alert type. Without waveforms only the
/// aggregates of numeric channels remain.
pub fn feature_schema(tau: AlertType, ablation: Ablation) -> Vec<String> {
    let channels = feature_channels(tau);
    let mut names = Vec::new();
    for &c in &channels {
        if ablation == Ablation::WithoutWaveform && c.kind() == ChannelKind::Waveform {
            continue;
        }
        for a in AGGREGATES {
            names.push(format!("{a}_{}", c.feature_suffix()));
        }
    }
    if ablation == Ablation::WithWaveform {
        for (name, c) in DERIVED {
            if channels.contains(&c) {
                names.push(name.to_string());
            }
        }
        for &c in &channels {
            if c.kind() == ChannelKind::Waveform {
                names.push(format!("density_{}", c.feature_suffix()));
            }
        }
    }
    names
}

/// Named feature values for one window; a missing name means no data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub row_id: String,
    pub values: BTreeMap<String, f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    fn put(&mut self, name: String, v: Option<f64>) {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            self.values.insert(name, v);
        }
    }
}

/// Moments and quartiles of the present samples. Skew and kurtosis (excess)
/// are absent when the samples have no spread.
fn aggregates(values: &[f64]) -> [Option<f64>; 7] {
    if values.is_empty() {
        return [None; 7];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let spread = m2.sqrt() > 1e-12 * scale;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        Some(mean),
        Some(if spread { m2.sqrt() } else { 0.0 }),
        spread.then(|| m4 / (m2 * m2) - 3.0),
        spread.then(|| m3 / m2.powf(1.5)),
        Some(quantile_sorted(&sorted, 0.5)),
        Some(quantile_sorted(&sorted, 0.25)),
        Some(quantile_sorted(&sorted, 0.75)),
    ]
}

/// Every feature in the with-waveform schema that the window supports.
pub fn extract_features(ctx: &WindowContext<'_>, tau: AlertType) -> FeatureVector {
    let mut fv = FeatureVector { row_id: ctx.window.row_id(), values: BTreeMap::new() };
    let channels = feature_channels(tau);
    for &c in &channels {
        let values = ctx.view.channel(c).map(|s| s.values).unwrap_or(&[]);
        for (a, v) in AGGREGATES.iter().zip(aggregates(values)) {
            fv.put(format!("{a}_{}", c.feature_suffix()), v);
        }
        if c.kind() == ChannelKind::Waveform {
            fv.put(format!("density_{}", c.feature_suffix()), ctx.density(c));
        }
    }
    let d = &ctx.derived;
    let derived = [
        d.resp_fft_rate,
        d.resp_peak_rate,
        d.resp_extrema_rate,
        d.resp_height,
        d.pleth_rr(),
        d.pleth.hr_fft,
        d.pleth.hr_peaks,
        d.pleth.hr_intervals,
        d.pleth.height,
        d.pleth.pulsatility,
        d.pleth_t.hr_fft,
        d.pleth_t.hr_peaks,
        d.pleth_t.hr_intervals,
        d.pleth_t.height,
        d.pleth_t.pulsatility,
        d.hr_ecg2,
        d.hr_ecg3,
    ];
    for ((name, c), v) in DERIVED.iter().zip(derived) {
        if channels.contains(c) {
            fv.put(name.to_string(), v);
        }
    }
    fv
}

/// Rows of optional values over a fixed schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub row_ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl FeatureMatrix {
    pub fn from_vectors(names: Vec<String>, vectors: &[FeatureVector]) -> Self {
        let rows = vectors
            .iter()
            .map(|fv| names.iter().map(|n| fv.get(n)).collect())
            .collect();
        Self { names, row_ids: vectors.iter().map(|v| v.row_id.clone()).collect(), rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Restricts to `names`, in that order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, FeatureError> {
        let cols = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| FeatureError::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            names: names.to_vec(),
            row_ids: self.row_ids.clone(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
        })
    }

    /// Header `row_id,<names>`; absent values are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("row_id") {
            return Err(FeatureError::Malformed { line: 1, reason: "first column must be row_id".into() });
        }
        let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut m = Self { names, row_ids: Vec::new(), rows: Vec::new() };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>().map(Some).map_err(|e| FeatureError::Malformed {
                            line,
                            reason: format!("`{s}`: {e}"),
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != m.names.len() {
                return Err(FeatureError::SchemaMismatch { expected: m.names.len(), got: row.len() });
            }
            m.row_ids.push(rec[0].to_string());
            m.rows.push(row);
        }
        Ok(m)
    }
}

/// Fully populated matrix ready for the forest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub names: Vec<String>,
    pub row_ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
}

impl DenseMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }
}

pub const MAX_MISSING_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessPolicy {
    pub dropped: BTreeSet<String>,
    /// Fill value per kept feature, in schema order.
    pub impute: Vec<(String, f64)>,
}

/// Drops features missing in more than 75% of rows. A kept feature is filled
/// with -1 when 0 falls inside its observed range, else with 0.
pub fn fit_missingness_policy(train: &FeatureMatrix) -> Result<MissingnessPolicy, FeatureError> {
    if train.n_rows() == 0 {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let n = train.n_rows() as f64;
    let mut dropped = BTreeSet::new();
    let mut impute = Vec::new();
    for (j, name) in train.names.iter().enumerate() {
        let observed: Vec<f64> = train.rows.iter().filter_map(|r| r[j]).collect();
        if (n - observed.len() as f64) / n > MAX_MISSING_FRACTION {
            dropped.insert(name.clone());
            continue;
        }
        let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fill = if lo <= 0.0 && 0.0 <= hi { -1.0 } else { 0.0 };
        impute.push((name.clone(), fill));
    }
    Ok(MissingnessPolicy { dropped, impute })
}

impl MissingnessPolicy {
    pub fn kept(&self) -> Vec<String> {
        self.impute.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<DenseMatrix, FeatureError> {
        let sub = m.select_columns(&self.kept())?;
        let x = sub
            .rows
            .iter()
            .map(|r| r.iter().zip(&self.impute).map(|(v, (_, fill))| v.unwrap_or(*fill)).collect())
            .collect();
        Ok(DenseMatrix { names: sub.names, row_ids: sub.row_ids, x })
    }
}
