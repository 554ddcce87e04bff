//! Multi-rate physiological recordings.
//!
//! A [`PatientRecord`] holds one [`Channel`] per channel id. Each channel keeps
//! its samples as `(index, value)` pairs at the channel's own sampling rate, so
//! dropout is represented by absent indices rather than sentinel values. Time
//! is always converted to sample indices at the channel rate and windows are
//! half-open.
//!
//! On disk a record is a directory holding `manifest.json` plus one
//! `index,value` CSV file per channel.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("missing file for channel {channel}: {path}")]
    MissingFile { channel: String, path: PathBuf },
    #[error("malformed row in channel {channel} at line {line}: {reason}")]
    MalformedRow {
        channel: String,
        line: usize,
        reason: String,
    },
    #[error("fs mismatch for channel {channel}: {fs} Hz is not an allowed rate")]
    FsMismatch { channel: String, fs: f64 },
    #[error("kind mismatch for channel {channel}: declared {declared}")]
    KindMismatch { channel: String, declared: String },
    #[error("duplicate channel {channel}")]
    DuplicateChannel { channel: String },
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("patient id must be non-empty")]
    EmptyPatientId,
    #[error("malformed label file {path} at line {line}: {reason}")]
    LabelFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelId {
    #[serde(rename = "ECG_II")]
    EcgII,
    #[serde(rename = "ECG_III")]
    EcgIII,
    #[serde(rename = "PLETH")]
    Pleth,
    #[serde(rename = "PLETH_T")]
    PlethT,
    #[serde(rename = "ART")]
    Art,
    #[serde(rename = "RESP")]
    Resp,
    #[serde(rename = "RR")]
    Rr,
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "SPO2")]
    Spo2,
    #[serde(rename = "SPO2_T")]
    Spo2T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Waveform,
    Numeric,
}

impl ChannelId {
    pub const ALL: [ChannelId; 10] = [
        ChannelId::EcgII,
        ChannelId::EcgIII,
        ChannelId::Pleth,
        ChannelId::PlethT,
        ChannelId::Art,
        ChannelId::Resp,
        ChannelId::Rr,
        ChannelId::Hr,
        ChannelId::Spo2,
        ChannelId::Spo2T,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelId::EcgII => "ECG_II",
            ChannelId::EcgIII => "ECG_III",
            ChannelId::Pleth => "PLETH",
            ChannelId::PlethT => "PLETH_T",
            ChannelId::Art => "ART",
            ChannelId::Resp => "RESP",
            ChannelId::Rr => "RR",
            ChannelId::Hr => "HR",
            ChannelId::Spo2 => "SPO2",
            ChannelId::Spo2T => "SPO2_T",
        }
    }

    pub fn kind(self) -> ChannelKind {
        match self {
            ChannelId::Rr | ChannelId::Hr | ChannelId::Spo2 | ChannelId::Spo2T => {
                ChannelKind::Numeric
            }
            _ => ChannelKind::Waveform,
        }
    }

    pub fn allowed_fs(self) -> &'static [f64] {
        match self {
            ChannelId::EcgII | ChannelId::EcgIII => &[250.0, 500.0],
            ChannelId::Pleth | ChannelId::PlethT | ChannelId::Art => &[125.0],
            ChannelId::Resp => &[62.5],
            ChannelId::Rr | ChannelId::Hr | ChannelId::Spo2 | ChannelId::Spo2T => &[1.0],
        }
    }

    pub fn is_fs_allowed(self, fs: f64) -> bool {
        self.allowed_fs().contains(&fs)
    }

    /// Suffix used in aggregate feature names, e.g. `std_resp`, `med_SpO2T`.
    pub fn feature_suffix(self) -> &'static str {
        match self {
            ChannelId::EcgII => "ecg2",
            ChannelId::EcgIII => "ecg3",
            ChannelId::Pleth => "pleth",
            ChannelId::PlethT => "plethT",
            ChannelId::Art => "art",
            ChannelId::Resp => "resp",
            ChannelId::Rr => "rr",
            ChannelId::Hr => "hr",
            ChannelId::Spo2 => "SpO2",
            ChannelId::Spo2T => "SpO2T",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| DataError::UnknownChannel(s.to_string()))
    }
}

/// Converts a time in seconds to the first sample index at or after it.
pub fn index_at(seconds: f64, fs: f64) -> u64 {
    let raw = seconds * fs;
    if raw <= 0.0 {
        return 0;
    }
    // Guard against products like 59.99999999 landing one sample late.
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as u64
    } else {
        raw.ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    id: ChannelId,
    fs: f64,
    indices: Vec<u64>,
    values: Vec<f64>,
}

impl Channel {
    pub fn new(
        id: ChannelId,
        fs: f64,
        indices: Vec<u64>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        if !id.is_fs_allowed(fs) {
            return Err(DataError::FsMismatch {
                channel: id.to_string(),
                fs,
            });
        }
        if indices.len() != values.len() {
            return Err(DataError::MalformedRow {
                channel: id.to_string(),
                line: indices.len().min(values.len()) + 1,
                reason: "index and value counts differ".into(),
            });
        }
        if let Some(pos) = indices.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DataError::MalformedRow {
                channel: id.to_string(),
                line: pos + 2,
                reason: "sample indices must be strictly increasing".into(),
            });
        }
        Ok(Self {
            id,
            fs,
            indices,
            values,
        })
    }

    /// A gap-free channel whose first sample sits at `start_index`.
    pub fn contiguous(
        id: ChannelId,
        fs: f64,
        start_index: u64,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        let indices = (start_index..start_index + values.len() as u64).collect();
        Self::new(id, fs, indices, values)
    }

    pub fn id(&self) -> ChannelId {
        self.id
    }

    pub fn kind(&self) -> ChannelKind {
        self.id.kind()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to sample values; indices stay fixed so invariants hold.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Positions (into `indices`/`values`) of samples with index in `[lo, hi)`.
    pub fn positions(&self, lo: u64, hi: u64) -> std::ops::Range<usize> {
        let a = self.indices.partition_point(|&i| i < lo);
        let b = self.indices.partition_point(|&i| i < hi);
        a..b.max(a)
    }

    /// Keeps only the samples for which `keep(index, value)` is true.
    pub fn retain(&mut self, mut keep: impl FnMut(u64, f64) -> bool) {
        let mut idx = Vec::with_capacity(self.indices.len());
        let mut val = Vec::with_capacity(self.values.len());
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            if keep(i, v) {
                idx.push(i);
                val.push(v);
            }
        }
        self.indices = idx;
        self.values = val;
    }

    pub fn view(&self) -> ChannelSlice<'_> {
        ChannelSlice {
            id: self.id,
            fs: self.fs,
            indices: &self.indices,
            values: &self.values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    patient_id: String,
    channels: BTreeMap<ChannelId, Channel>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>) -> Result<Self, DataError> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(DataError::EmptyPatientId);
        }
        Ok(Self {
            patient_id,
            channels: BTreeMap::new(),
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn insert(&mut self, channel: Channel) -> Result<(), DataError> {
        let id = channel.id();
        if self.channels.contains_key(&id) {
            return Err(DataError::DuplicateChannel {
                channel: id.to_string(),
            });
        }
        self.channels.insert(id, channel);
        Ok(())
    }

    pub fn channel(&self, id: ChannelId) -> Option<&Channel> {
        self.channels.get(&id)
    }

    pub fn channel_mut(&mut self, id: ChannelId) -> Option<&mut Channel> {
        self.channels.get_mut(&id)
    }

    pub fn remove(&mut self, id: ChannelId) -> Option<Channel> {
        self.channels.remove(&id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.values()
    }

    /// True when the record carries telemetric oximetry (SPO2_T or PLETH_T).
    pub fn telemetric(&self) -> bool {
        self.channels.contains_key(&ChannelId::Spo2T)
            || self.channels.contains_key(&ChannelId::PlethT)
    }

    /// Record length in seconds, taken from the latest sample of any channel.
    pub fn duration_s(&self) -> f64 {
        self.channels
            .values()
            .filter_map(|c| c.indices().last().map(|&i| (i + 1) as f64 / c.fs()))
            .fold(0.0, f64::max)
    }
}

/// Borrowed samples of one channel restricted to some time range.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSlice<'a> {
    pub id: ChannelId,
    pub fs: f64,
    pub indices: &'a [u64],
    pub values: &'a [f64],
}

impl<'a> ChannelSlice<'a> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn restrict(&self, lo: u64, hi: u64) -> ChannelSlice<'a> {
        let a = self.indices.partition_point(|&i| i < lo);
        let b = self.indices.partition_point(|&i| i < hi).max(a);
        ChannelSlice {
            id: self.id,
            fs: self.fs,
            indices: &self.indices[a..b],
            values: &self.values[a..b],
        }
    }

    /// Values of the longest run of consecutive sample indices (earliest on ties).
    pub fn longest_contiguous(&self) -> &'a [f64] {
        if self.indices.is_empty() {
            return &[];
        }
        let (mut best_start, mut best_len) = (0, 1);
        let mut start = 0;
        for k in 1..self.indices.len() {
            if self.indices[k] != self.indices[k - 1] + 1 {
                start = k;
            }
            if k + 1 - start > best_len {
                best_start = start;
                best_len = k + 1 - start;
            }
        }
        &self.values[best_start..best_start + best_len]
    }
}

/// Per-channel views over the half-open interval `[start, start + duration)`.
#[derive(Debug, Clone)]
pub struct WindowView<'a> {
    start: f64,
    duration: f64,
    channels: BTreeMap<ChannelId, ChannelSlice<'a>>,
}

pub fn slice_window(record: &PatientRecord, start: f64, duration: f64) -> WindowView<'_> {
    let end = start + duration.max(0.0);
    let channels = record
        .channels
        .iter()
        .map(|(&id, ch)| {
            let slice = ch.view().restrict(index_at(start, ch.fs()), index_at(end, ch.fs()));
            (id, slice)
        })
        .collect();
    WindowView {
        start,
        duration: duration.max(0.0),
        channels,
    }
}

impl<'a> WindowView<'a> {
    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn channel(&self, id: ChannelId) -> Option<&ChannelSlice<'a>> {
        self.channels.get(&id)
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.channels.keys().copied()
    }

    /// Restricts this view to its intersection with `[start, start + duration)`.
    pub fn slice(&self, start: f64, duration: f64) -> WindowView<'a> {
        let lo = self.start.max(start);
        let hi = (self.start + self.duration).min(start + duration.max(0.0)).max(lo);
        let channels = self
            .channels
            .iter()
            .map(|(&id, s)| (id, s.restrict(index_at(lo, s.fs), index_at(hi, s.fs))))
            .collect();
        WindowView {
            start: lo,
            duration: hi - lo,
            channels,
        }
    }

    /// Removes a channel from the view, as if the record never carried it.
    pub fn without(mut self, id: ChannelId) -> Self {
        self.channels.remove(&id);
        self
    }
}

/// Fraction of expected samples present: `count / (fs * duration)`, clamped to `[0, 1]`.
pub fn channel_density(view: &WindowView<'_>, channel: ChannelId) -> Result<f64, DataError> {
    let slice = view
        .channel(channel)
        .ok_or_else(|| DataError::UnknownChannel(channel.to_string()))?;
    let expected = slice.fs * view.duration();
    if expected <= 0.0 {
        return Ok(0.0);
    }
    Ok((slice.len() as f64 / expected).clamp(0.0, 1.0))
}

/// Ground-truth adjudication of an alert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum AlertClass {
    Real,
    Artifact,
}

impl AlertClass {
    pub fn as_u8(self) -> u8 {
        match self {
            AlertClass::Real => 0,
            AlertClass::Artifact => 1,
        }
    }

    pub fn from_u8(y: u8) -> Option<Self> {
        match y {
            0 => Some(AlertClass::Real),
            1 => Some(AlertClass::Artifact),
            _ => None,
        }
    }

    pub fn is_artifact(self) -> bool {
        self == AlertClass::Artifact
    }
}

impl From<AlertClass> for u8 {
    fn from(c: AlertClass) -> u8 {
        c.as_u8()
    }
}

impl TryFrom<u8> for AlertClass {
    type Error = String;

    fn try_from(y: u8) -> Result<Self, Self::Error> {
        AlertClass::from_u8(y).ok_or_else(|| format!("label must be 0 or 1, got {y}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub event_id: String,
    pub y: AlertClass,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    patient_id: String,
    channels: Vec<ManifestChannel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestChannel {
    id: String,
    file: String,
    fs: f64,
    kind: String,
}

fn kind_str(kind: ChannelKind) -> &'static str {
    match kind {
        ChannelKind::Waveform => "waveform",
        ChannelKind::Numeric => "numeric",
    }
}

/// Loads a record from its manifest, validating every declared channel.
pub fn load_patient_record(manifest_path: &Path) -> Result<PatientRecord, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut record = PatientRecord::new(manifest.patient_id)?;
    for entry in &manifest.channels {
        let id: ChannelId = entry.id.parse()?;
        if record.channel(id).is_some() {
            return Err(DataError::DuplicateChannel {
                channel: id.to_string(),
            });
        }
        if entry.kind != kind_str(id.kind()) {
            return Err(DataError::KindMismatch {
                channel: id.to_string(),
                declared: entry.kind.clone(),
            });
        }
        if !id.is_fs_allowed(entry.fs) {
            return Err(DataError::FsMismatch {
                channel: id.to_string(),
                fs: entry.fs,
            });
        }
        let path = base.join(&entry.file);
        if !path.is_file() {
            return Err(DataError::MissingFile {
                channel: id.to_string(),
                path,
            });
        }
        let (indices, values) = read_channel_csv(&path, id)?;
        record.insert(Channel::new(id, entry.fs, indices, values)?)?;
    }
    Ok(record)
}

fn read_channel_csv(path: &Path, id: ChannelId) -> Result<(Vec<u64>, Vec<f64>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::MalformedRow {
            channel: id.to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let line = n + 1;
        let row = row.map_err(|e| DataError::MalformedRow {
            channel: id.to_string(),
            line,
            reason: e.to_string(),
        })?;
        if line == 1 && row.get(0) == Some("index") {
            continue;
        }
        let malformed = |reason: &str| DataError::MalformedRow {
            channel: id.to_string(),
            line,
            reason: reason.to_string(),
        };
        if row.len() != 2 {
            return Err(malformed("expected two columns `index,value`"));
        }
        let index: u64 = row[0].parse().map_err(|_| malformed("bad index"))?;
        let value: f64 = row[1].parse().map_err(|_| malformed("bad value"))?;
        if indices.last().is_some_and(|&last| index <= last) {
            return Err(malformed("sample indices must be strictly increasing"));
        }
        indices.push(index);
        values.push(value);
    }
    Ok((indices, values))
}

/// Writes `manifest.json` plus one `<CHANNEL>.csv` per channel into `dir`.
pub fn write_patient_record(record: &PatientRecord, dir: &Path) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut channels = Vec::new();
    for ch in record.channels() {
        let file = format!("{}.csv", ch.id());
        let path = dir.join(&file);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| DataError::Io {
            path: path.clone(),
            source: e.into(),
        })?;
        let to_io = |e: csv::Error| DataError::Io {
            path: path.clone(),
            source: e.into(),
        };
        writer.write_record(["index", "value"]).map_err(to_io)?;
        let mut ibuf = String::new();
        let mut vbuf = String::new();
        for (&i, &v) in ch.indices().iter().zip(ch.values()) {
            use std::fmt::Write;
            ibuf.clear();
            vbuf.clear();
            let _ = write!(ibuf, "{i}");
            let _ = write!(vbuf, "{v}");
            writer.write_record([&ibuf, &vbuf]).map_err(to_io)?;
        }
        writer.flush().map_err(io_err(&path))?;
        channels.push(ManifestChannel {
            id: ch.id().to_string(),
            file,
            fs: ch.fs(),
            kind: kind_str(ch.kind()).to_string(),
        });
    }
    let manifest = Manifest {
        patient_id: record.patient_id().to_string(),
        channels,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<GroundTruthLabel>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim();
        if line.is_empty() || (line_no == 1 && line.starts_with("event_id")) {
            continue;
        }
        let bad = |reason: &str| DataError::LabelFile {
            path: path.to_path_buf(),
            line: line_no,
            reason: reason.to_string(),
        };
        let (id, y) = line.rsplit_once(',').ok_or_else(|| bad("expected `event_id,y`"))?;
        let y: u8 = y.trim().parse().map_err(|_| bad("label is not an integer"))?;
        let y = AlertClass::from_u8(y).ok_or_else(|| bad("label must be 0 or 1"))?;
        labels.push(GroundTruthLabel {
            event_id: id.trim().to_string(),
            y,
        });
    }
    Ok(labels)
}

pub fn write_labels(labels: &[GroundTruthLabel], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("event_id,y\n");
    for l in labels {
        out.push_str(&format!("{},{}\n", l.event_id, l.y.as_u8()));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Patient directories (those containing a manifest) under `data_dir`, sorted by name.
pub fn list_patient_manifests(data_dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(data_dir).map_err(io_err(data_dir))? {
        let entry = entry.map_err(io_err(data_dir))?;
        let manifest = entry.path().join(MANIFEST_FILE);
        if manifest.is_file() {
            out.push(manifest);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(id: ChannelId, indices: Vec<u64>) -> Channel {
        let values = indices.iter().map(|&i| i as f64).collect();
        Channel::new(id, 1.0, indices, values).unwrap()
    }

    #[test]
    fn channel_rejects_disallowed_rate() {
        let err = Channel::contiguous(ChannelId::EcgII, 300.0, 0, vec![0.0; 10]).unwrap_err();
        assert!(matches!(err, DataError::FsMismatch { .. }));
        assert!(err.to_string().contains("fs mismatch"));
    }

    #[test]
    fn channel_rejects_unsorted_indices() {
        let err = Channel::new(ChannelId::Hr, 1.0, vec![0, 2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 3, .. }));
    }

    #[test]
    fn duplicate_channel_is_rejected() {
        let mut rec = PatientRecord::new("p").unwrap();
        rec.insert(numeric(ChannelId::Hr, vec![0, 1])).unwrap();
        let err = rec.insert(numeric(ChannelId::Hr, vec![0])).unwrap_err();
        assert!(matches!(err, DataError::DuplicateChannel { .. }));
        assert!(PatientRecord::new("").is_err());
    }

    #[test]
    fn resp_minute_holds_at_most_3750_samples() {
        let mut rec = PatientRecord::new("p").unwrap();
        rec.insert(Channel::contiguous(ChannelId::Resp, 62.5, 0, vec![0.0; 7500]).unwrap())
            .unwrap();
        let view = slice_window(&rec, 30.0, 60.0);
        let n = view.channel(ChannelId::Resp).unwrap().len();
        assert_eq!(n, 3750);
        assert_eq!(channel_density(&view, ChannelId::Resp).unwrap(), 1.0);
    }

    #[test]
    fn slice_inside_gap_is_empty_and_straddling_counts_present() {
        let mut rec = PatientRecord::new("p").unwrap();
        // 1 Hz HR with a gap over [100, 120).
        let idx: Vec<u64> = (0..300).filter(|i| !(100..120).contains(i)).collect();
        rec.insert(numeric(ChannelId::Hr, idx)).unwrap();
        let gap = slice_window(&rec, 102.0, 10.0);
        assert!(gap.channel(ChannelId::Hr).unwrap().is_empty());
        assert_eq!(channel_density(&gap, ChannelId::Hr).unwrap(), 0.0);
        let straddle = slice_window(&rec, 80.0, 60.0);
        assert_eq!(straddle.channel(ChannelId::Hr).unwrap().len(), 40);
    }

    #[test]
    fn density_matches_present_fraction() {
        let mut rec = PatientRecord::new("p").unwrap();
        rec.insert(numeric(ChannelId::Rr, (0..39).collect())).unwrap();
        let view = slice_window(&rec, 0.0, 60.0);
        assert!((channel_density(&view, ChannelId::Rr).unwrap() - 0.65).abs() < 1e-15);
        assert!(matches!(
            channel_density(&view, ChannelId::Spo2),
            Err(DataError::UnknownChannel(_))
        ));
    }

    #[test]
    fn nested_slice_equals_intersection() {
        let mut rec = PatientRecord::new("p").unwrap();
        rec.insert(Channel::contiguous(ChannelId::Resp, 62.5, 0, vec![1.0; 10_000]).unwrap())
            .unwrap();
        let outer = slice_window(&rec, 10.0, 60.0);
        let nested = outer.slice(40.0, 60.0);
        let direct = slice_window(&rec, 40.0, 30.0);
        let a = nested.channel(ChannelId::Resp).unwrap();
        let b = direct.channel(ChannelId::Resp).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(nested.duration(), direct.duration());
    }

    #[test]
    fn longest_contiguous_picks_the_longest_run() {
        let ch = Channel::new(
            ChannelId::Hr,
            1.0,
            vec![0, 1, 5, 6, 7, 9],
            vec![0.0, 1.0, 5.0, 6.0, 7.0, 9.0],
        )
        .unwrap();
        assert_eq!(ch.view().longest_contiguous(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let labels = vec![
            GroundTruthLabel {
                event_id: "a".into(),
                y: AlertClass::Real,
            },
            GroundTruthLabel {
                event_id: "b".into(),
                y: AlertClass::Artifact,
            },
        ];
        write_labels(&labels, &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
        fs::write(&path, "event_id,y\nx,2\n").unwrap();
        assert!(matches!(read_labels(&path), Err(DataError::LabelFile { line: 2, .. })));
    }
}
