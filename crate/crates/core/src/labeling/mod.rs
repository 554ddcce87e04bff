//! Labeling functions: heuristics that vote real, artifact, or abstain on one
//! analysis window, and the vote matrix they produce.

mod rr;
mod spo2;

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{AlertType, AlertWindow};
use crate::data::{channel_density, AlertClass, ChannelId, WindowView};
use crate::dsp::{median, DerivedEstimates};

pub use rr::rr_lf_suite;
pub use spo2::spo2_lf_suite;

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("duplicate labeling function name `{0}`")]
    DuplicateName(String),
    #[error("duplicate row id `{0}`")]
    DuplicateRow(String),
    #[error("row {row} has {got} votes, expected {expected}")]
    RowLength { row: String, got: usize, expected: usize },
    #[error("malformed vote matrix: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vote {
    Abstain,
    Real,
    Artifact,
}

impl Vote {
    pub fn code(self) -> i8 {
        match self {
            Vote::Abstain => -1,
            Vote::Real => 0,
            Vote::Artifact => 1,
        }
    }

    pub fn from_code(code: i8) -> Option<Vote> {
        match code {
            -1 => Some(Vote::Abstain),
            0 => Some(Vote::Real),
            1 => Some(Vote::Artifact),
            _ => None,
        }
    }

    pub fn is_vote(self) -> bool {
        self != Vote::Abstain
    }

    /// The vote for class `y`.
    pub fn for_class(y: AlertClass) -> Vote {
        match y {
            AlertClass::Real => Vote::Real,
            AlertClass::Artifact => Vote::Artifact,
        }
    }
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Everything a labeling function may look at for one window.
#[derive(Debug, Clone)]
pub struct WindowContext<'a> {
    pub window: &'a AlertWindow,
    pub view: WindowView<'a>,
    pub derived: DerivedEstimates,
}

impl WindowContext<'_> {
    pub fn numeric(&self, id: ChannelId) -> Option<&[f64]> {
        self.view.channel(id).map(|s| s.values).filter(|v| !v.is_empty())
    }

    pub fn numeric_median(&self, id: ChannelId) -> Option<f64> {
        let mut v = self.numeric(id)?.to_vec();
        median(&mut v).filter(|m| m.is_finite())
    }

    /// Population standard deviation of the present samples.
    pub fn numeric_std(&self, id: ChannelId) -> Option<f64> {
        let v = self.numeric(id)?;
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
    }

    /// Density of a channel the record carries; `None` when it has no such channel.
    pub fn density(&self, id: ChannelId) -> Option<f64> {
        channel_density(&self.view, id).ok()
    }
}

type LfFn = dyn Fn(&WindowContext<'_>) -> Vote + Send + Sync;

#[derive(Clone)]
pub struct LabelingFunction {
    name: String,
    f: Arc<LfFn>,
}

impl LabelingFunction {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&WindowContext<'_>) -> Vote + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn evaluate(&self, ctx: &WindowContext<'_>) -> Vote {
        (self.f)(ctx)
    }
}

impl fmt::Debug for LabelingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelingFunction").field("name", &self.name).finish()
    }
}

/// `|estimate - reference| / reference`, defined only for a positive reference.
pub fn relative_diff(estimate: f64, reference: f64) -> Option<f64> {
    (reference > 0.0 && reference.is_finite() && estimate.is_finite())
        .then(|| (estimate - reference).abs() / reference)
}

/// REAL within `band`, ARTIFACT outside it, ABSTAIN when either side is absent.
pub fn agreement_vote(estimate: Option<f64>, reference: Option<f64>, band: f64) -> Vote {
    match (estimate, reference) {
        (Some(e), Some(r)) => match relative_diff(e, r) {
            Some(d) if d <= band => Vote::Real,
            Some(_) => Vote::Artifact,
            None => Vote::Abstain,
        },
        _ => Vote::Abstain,
    }
}

/// Thresholds for both suites. Only the 15% breath-rate band is anchored in
/// clinical practice; the rest are working defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfConfig {
    pub resp_extrema_band: f64,
    pub resp_fft_band: f64,
    pub resp_peakcount_band: f64,
    pub pleth_rr_agree_band: f64,
    pub pleth_rr_artifact_band: f64,
    pub resp_height_floor: f64,
    pub resp_missing_density: f64,
    pub rr_std_ceiling: f64,
    pub rr_numeric_density: f64,
    pub hr_band: f64,
    pub pulsatility_floor: f64,
    pub tachypnea_rr: f64,
    pub spo2_std_ceiling: f64,
    pub pleth_missing_density: f64,
    pub consensus_agree_band: f64,
    pub consensus_disagree_band: f64,
}

impl Default for LfConfig {
    fn default() -> Self {
        Self {
            resp_extrema_band: 0.15,
            resp_fft_band: 0.15,
            resp_peakcount_band: 0.20,
            pleth_rr_agree_band: 0.25,
            pleth_rr_artifact_band: 0.50,
            resp_height_floor: 0.1,
            resp_missing_density: 0.3,
            rr_std_ceiling: 4.0,
            rr_numeric_density: 0.65,
            hr_band: 0.10,
            pulsatility_floor: 0.05,
            tachypnea_rr: 20.0,
            spo2_std_ceiling: 2.5,
            pleth_missing_density: 0.3,
            consensus_agree_band: 0.10,
            consensus_disagree_band: 0.25,
        }
    }
}

pub fn lf_suite(tau: AlertType, cfg: &LfConfig) -> Vec<LabelingFunction> {
    match tau {
        AlertType::Rr => rr_lf_suite(cfg),
        AlertType::Spo2 => spo2_lf_suite(cfg),
    }
}

/// n windows by m labeling functions, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteMatrix {
    row_ids: Vec<String>,
    lf_names: Vec<String>,
    votes: Vec<Vote>,
}

impl VoteMatrix {
    pub fn new(lf_names: Vec<String>) -> Result<Self, LabelingError> {
        let mut seen = HashSet::new();
        for n in &lf_names {
            if !seen.insert(n.as_str()) {
                return Err(LabelingError::DuplicateName(n.clone()));
            }
        }
        Ok(Self { row_ids: Vec::new(), lf_names, votes: Vec::new() })
    }

    pub fn from_rows(
        lf_names: Vec<String>,
        rows: Vec<(String, Vec<Vote>)>,
    ) -> Result<Self, LabelingError> {
        let mut m = Self::new(lf_names)?;
        for (id, votes) in rows {
            m.push_row(id, &votes)?;
        }
        m.check_unique_rows()?;
        Ok(m)
    }

    fn check_unique_rows(&self) -> Result<(), LabelingError> {
        let mut seen = HashSet::new();
        for r in &self.row_ids {
            if !seen.insert(r.as_str()) {
                return Err(LabelingError::DuplicateRow(r.clone()));
            }
        }
        Ok(())
    }

    /// Appends a row. Uniqueness of ids is checked by the bulk constructors.
    pub fn push_row(&mut self, id: String, votes: &[Vote]) -> Result<(), LabelingError> {
        if votes.len() != self.lf_names.len() {
            return Err(LabelingError::RowLength {
                row: id,
                got: votes.len(),
                expected: self.lf_names.len(),
            });
        }
        self.row_ids.push(id);
        self.votes.extend_from_slice(votes);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_lfs(&self) -> usize {
        self.lf_names.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn lf_names(&self) -> &[String] {
        &self.lf_names
    }

    pub fn row(&self, i: usize) -> &[Vote] {
        let m = self.lf_names.len();
        &self.votes[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Vote]> {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> Vote {
        self.votes[i * self.lf_names.len() + j]
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> VoteMatrix {
        let mut out = VoteMatrix {
            row_ids: Vec::with_capacity(rows.len()),
            lf_names: self.lf_names.clone(),
            votes: Vec::with_capacity(rows.len() * self.n_lfs()),
        };
        for &r in rows {
            out.row_ids.push(self.row_ids[r].clone());
            out.votes.extend_from_slice(self.row(r));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LabelingError> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> =
            std::iter::once("row_id").chain(self.lf_names.iter().map(String::as_str)).collect();
        let csv_err = |e: csv::Error| LabelingError::Io(e.into());
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.code().to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, LabelingError> {
        let mut r = csv::Reader::from_reader(input);
        let bad = |e: csv::Error| LabelingError::Malformed(e.to_string());
        let header = r.headers().map_err(bad)?.clone();
        if header.get(0) != Some("row_id") {
            return Err(LabelingError::Malformed("first column must be row_id".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(bad)?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let votes = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.trim()
                        .parse::<i8>()
                        .ok()
                        .and_then(Vote::from_code)
                        .ok_or_else(|| LabelingError::Malformed(format!("bad vote `{c}` in row {id}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((id, votes));
        }
        Self::from_rows(names, rows)
    }
}

/// Evaluates every function on every window. Rows come out in window order
/// regardless of how the work is scheduled.
pub fn apply_labeling_functions(
    lfs: &[LabelingFunction],
    windows: &[WindowContext<'_>],
) -> Result<VoteMatrix, LabelingError> {
    let names: Vec<String> = lfs.iter().map(|l| l.name().to_string()).collect();
    let mut m = VoteMatrix::new(names)?;
    let rows: Vec<Vec<Vote>> = windows
        .par_iter()
        .map(|ctx| lfs.iter().map(|lf| lf.evaluate(ctx)).collect())
        .collect();
    for (ctx, votes) in windows.iter().zip(rows) {
        m.push_row(ctx.window.row_id(), &votes)?;
    }
    m.check_unique_rows()?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LfStats {
    pub name: String,
    pub coverage: f64,
    pub overlap: f64,
    pub conflict: f64,
}

pub fn lf_coverage_stats(m: &VoteMatrix) -> Vec<LfStats> {
    let n = m.n_rows();
    (0..m.n_lfs())
        .map(|j| {
            let (mut cov, mut ovl, mut con) = (0usize, 0usize, 0usize);
            for i in 0..n {
                let v = m.get(i, j);
                if !v.is_vote() {
                    continue;
                }
                cov += 1;
                let others = (0..m.n_lfs()).filter(|&k| k != j).map(|k| m.get(i, k));
                let (mut any, mut differ) = (false, false);
                for o in others.filter(|o| o.is_vote()) {
                    any = true;
                    differ |= o != v;
                }
                ovl += any as usize;
                con += differ as usize;
            }
            let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            LfStats {
                name: m.lf_names()[j].clone(),
                coverage: frac(cov),
                overlap: frac(ovl),
                conflict: frac(con),
            }
        })
        .collect()
}
