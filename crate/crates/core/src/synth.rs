//! Synthetic cohort with planted real and artifact alerts.
//!
//! Each patient gets continuous 1 Hz numerics and waveform segments around
//! every planted alert. Real alerts change the underlying physiology, so the
//! waveforms follow the numeric excursion. Artifact alerts leave physiology
//! alone, drive the numerics past the threshold and corrupt the waveforms
//! with one artifact kind.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{detect_alert_events, AlertCriteria, AlertError, AlertEvent, AlertType};
use crate::data::{
    index_at, write_labels, write_patient_record, AlertClass, Channel, ChannelId, DataError, GroundTruthLabel,
    PatientRecord, LABELS_FILE,
};
use crate::dsp::median;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("interval [{start}, {end}) s lies outside the record (0..{duration} s)")]
    IntervalOutOfRange { start: f64, end: f64, duration: f64 },
    #[error("record has no {0} channel to corrupt")]
    MissingChannel(ChannelId),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Alert(#[from] AlertError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArtifactKind {
    Flatline,
    NoiseBurst,
    SensorDropout,
    NumericWaveformMismatch,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::Flatline,
        ArtifactKind::NoiseBurst,
        ArtifactKind::SensorDropout,
        ArtifactKind::NumericWaveformMismatch,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub hours_per_patient: f64,
    pub events_per_patient: usize,
    pub artifact_rate: f64,
    pub seed: u64,
    pub artifact_kinds: Vec<ArtifactKind>,
    /// Share of patients monitored through the telemetric oximeter.
    pub telemetric_fraction: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 40,
            hours_per_patient: 2.0,
            events_per_patient: 5,
            artifact_rate: 0.26,
            seed: 0,
            artifact_kinds: ArtifactKind::ALL.to_vec(),
            telemetric_fraction: 0.4,
        }
    }
}

/// Seconds of record reserved per planted alert.
pub const MIN_SLOT_SECONDS: f64 = 1200.0;
/// Waveforms are generated from this long before an alert...
const LEAD_S: f64 = 90.0;
/// ...until this long after its start.
const TAIL_S: f64 = 300.0;
const RAMP_S: f64 = 10.0;
/// Numeric samples lost at random outside artifacts.
const NUMERIC_LOSS: f64 = 0.01;

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_patients < 2 {
            return bad(format!("n_patients must be at least 2, got {}", self.n_patients));
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return bad(format!("artifact_rate must lie in [0, 1], got {}", self.artifact_rate));
        }
        if !(0.0..=1.0).contains(&self.telemetric_fraction) {
            return bad(format!("telemetric_fraction must lie in [0, 1], got {}", self.telemetric_fraction));
        }
        if self.artifact_rate > 0.0 && self.artifact_kinds.is_empty() {
            return bad("artifact_kinds is empty but artifact_rate > 0".into());
        }
        if self.events_per_patient == 0 {
            return bad("events_per_patient must be at least 1".into());
        }
        let slot = self.hours_per_patient * 3600.0 / self.events_per_patient as f64;
        if !(slot >= MIN_SLOT_SECONDS) {
            return bad(format!(
                "{} h cannot hold {} alerts; each needs {MIN_SLOT_SECONDS} s",
                self.hours_per_patient, self.events_per_patient
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub tau: AlertType,
    /// Seconds from record origin.
    pub start: f64,
    pub duration: f64,
    pub y: AlertClass,
    pub kind: Option<ArtifactKind>,
}

impl PlantedEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPatient {
    pub record: PatientRecord,
    pub planted: Vec<PlantedEvent>,
    /// Detected events that matched a plant, labeled by it.
    pub labels: Vec<GroundTruthLabel>,
    /// Detected events with no plant behind them.
    pub unmatched: Vec<AlertEvent>,
}

/// Physiological targets of one real alert.
#[derive(Debug, Clone)]
struct Effect {
    start: f64,
    end: f64,
    resp_target: Option<f64>,
    hr_shift: f64,
    spo2_target: Option<f64>,
}

#[derive(Debug, Clone)]
struct Physiology {
    resp_base: f64,
    hr_base: f64,
    spo2_base: f64,
    wander_period: f64,
    wander_phase: f64,
    resp_amp: f64,
    pleth_amp: f64,
    mod_depth: f64,
    effects: Vec<Effect>,
}

/// 0 outside, 1 inside, cosine edges of `RAMP_S` leading into and out of the span.
fn ramp(t: f64, start: f64, end: f64) -> f64 {
    let edge = |x: f64| 0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos();
    if t < start {
        edge((t - (start - RAMP_S)) / RAMP_S)
    } else if t <= end {
        1.0
    } else {
        edge(1.0 - (t - end) / RAMP_S)
    }
}

impl Physiology {
    fn wander(&self, t: f64) -> f64 {
        (2.0 * PI * t / self.wander_period + self.wander_phase).sin()
    }

    /// Breaths per minute.
    fn resp_rate(&self, t: f64) -> f64 {
        let mut r = self.resp_base + 1.5 * self.wander(t);
        for e in &self.effects {
            if let Some(target) = e.resp_target {
                let w = ramp(t, e.start, e.end);
                r = r * (1.0 - w) + target * w;
            }
        }
        r
    }

    /// Beats per minute.
    fn heart_rate(&self, t: f64) -> f64 {
        let mut h = self.hr_base + 4.0 * self.wander(t * 0.7);
        for e in &self.effects {
            h += e.hr_shift * ramp(t, e.start, e.end);
        }
        h
    }

    fn spo2(&self, t: f64) -> f64 {
        let mut s = self.spo2_base;
        for e in &self.effects {
            if let Some(target) = e.spo2_target {
                let w = ramp(t, e.start, e.end);
                s = s * (1.0 - w) + target * w;
            }
        }
        s
    }
}

/// Phases (in cycles) of a rate signal sampled at `fs`, trapezoid-integrated.
fn phases(t0: f64, n: usize, fs: f64, start_phase: f64, rate_per_min: impl Fn(f64) -> f64) -> Vec<f64> {
    let dt = 1.0 / fs;
    let mut out = Vec::with_capacity(n);
    let mut ph = start_phase;
    let mut prev = rate_per_min(t0);
    for k in 0..n {
        out.push(ph);
        let next = rate_per_min(t0 + (k + 1) as f64 * dt);
        ph += (prev + next) / 2.0 / 60.0 * dt;
        prev = next;
    }
    out
}

fn noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

/// Sample indices of `[start, end)` seconds at `fs`.
fn index_span(start: f64, end: f64, fs: f64) -> (u64, u64) {
    (index_at(start, fs), index_at(end, fs))
}

struct Segment {
    start: f64,
    end: f64,
}

fn resp_wave(p: &Physiology, seg: &Segment, rng: &mut ChaCha8Rng) -> (u64, Vec<f64>) {
    let fs = 62.5;
    let (a, b) = index_span(seg.start, seg.end, fs);
    let n = (b - a) as usize;
    let t0 = a as f64 / fs;
    let ph0: f64 = rng.random();
    let ph = phases(t0, n, fs, ph0, |t| p.resp_rate(t));
    let v = ph
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let t = t0 + k as f64 / fs;
            let x = 2.0 * PI * f;
            p.resp_amp * (x.sin() + 0.25 * (2.0 * x + 0.6).sin()) + 0.1 * (2.0 * PI * t / 300.0).sin()
                + noise(rng, 0.04)
        })
        .collect();
    (a, v)
}

/// Pleth pulse train amplitude-modulated by breathing, plus the matching ECG
/// leads whose R waves precede each pulse.
fn cardiac_waves(
    p: &Physiology,
    seg: &Segment,
    ecg_fs: f64,
    with_ecg3: bool,
    rng: &mut ChaCha8Rng,
) -> (u64, Vec<f64>, u64, Vec<f64>, Vec<f64>) {
    let beat0: f64 = rng.random();
    let resp0: f64 = rng.random();

    let fs = 125.0;
    let (a, b) = index_span(seg.start, seg.end, fs);
    let n = (b - a) as usize;
    let t0 = a as f64 / fs;
    let beat = phases(t0, n, fs, beat0, |t| p.heart_rate(t));
    let breath = phases(t0, n, fs, resp0, |t| p.resp_rate(t));
    let pleth = beat
        .iter()
        .zip(&breath)
        .map(|(&h, &r)| {
            let ph = h.rem_euclid(1.0);
            let pulse = (-((ph - 0.3) / 0.08).powi(2)).exp() + 0.35 * (-((ph - 0.6) / 0.1).powi(2)).exp();
            let m = 1.0 + p.mod_depth * (2.0 * PI * r).sin();
            p.pleth_amp * m * pulse + 0.05 * (2.0 * PI * r).sin() + noise(rng, 0.01)
        })
        .collect();

    let (ea, eb) = index_span(seg.start, seg.end, ecg_fs);
    let en = (eb - ea) as usize;
    let et0 = ea as f64 / ecg_fs;
    let ebeat = phases(et0, en, ecg_fs, beat0, |t| p.heart_rate(t));
    let mut ecg2 = Vec::with_capacity(en);
    let mut ecg3 = Vec::with_capacity(if with_ecg3 { en } else { 0 });
    for (k, &h) in ebeat.iter().enumerate() {
        let t = et0 + k as f64 / ecg_fs;
        let hz = p.heart_rate(t) / 60.0;
        // Seconds from the nearest R wave (phase 0).
        let ph = h.rem_euclid(1.0);
        let dt = (if ph > 0.5 { ph - 1.0 } else { ph }) / hz;
        let qrs = (-(dt / 0.012).powi(2)).exp() - 0.15 * (-((dt + 0.03) / 0.01).powi(2)).exp()
            - 0.2 * (-((dt - 0.03) / 0.012).powi(2)).exp();
        let twave = 0.25 * (-((dt - 0.25) / 0.05).powi(2)).exp();
        let wander = 0.1 * (2.0 * PI * 0.2 * t).sin();
        ecg2.push(qrs + twave + wander + noise(rng, 0.02));
        if with_ecg3 {
            ecg3.push(0.7 * qrs + 0.15 * twave - wander + noise(rng, 0.02));
        }
    }
    (a, pleth, ea, ecg2, ecg3)
}

fn append(ch: &mut Option<(Vec<u64>, Vec<f64>)>, start: u64, values: Vec<f64>) {
    let (idx, val) = ch.get_or_insert_with(|| (Vec::new(), Vec::new()));
    idx.extend(start..start + values.len() as u64);
    val.extend(values);
}

fn median_of(values: &[f64]) -> f64 {
    median(&mut values.to_vec()).unwrap_or(f64::NAN)
}

/// Corrupts the waveform (or, for a mismatch, the numeric) that an alert of
/// type `tau` is judged by, over `[start, end)` seconds. The numeric
/// excursion that raised the alert is left as is. Waveform artifacts during
/// an oxygen-saturation alert come from patient motion, which also puts a
/// noise burst on the ECG leads.
pub fn inject_artifact(
    record: &mut PatientRecord,
    tau: AlertType,
    interval: (f64, f64),
    kind: ArtifactKind,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let (start, end) = interval;
    let duration = record.duration_s();
    if !(start >= 0.0 && start < end && end <= duration) {
        return Err(SynthError::IntervalOutOfRange { start, end, duration });
    }
    let target = match (kind, tau) {
        (ArtifactKind::NumericWaveformMismatch, AlertType::Rr) => ChannelId::Rr,
        (ArtifactKind::NumericWaveformMismatch, AlertType::Spo2) => ChannelId::Hr,
        (_, AlertType::Rr) => ChannelId::Resp,
        (_, AlertType::Spo2) => {
            if record.channel(ChannelId::Pleth).is_some() {
                ChannelId::Pleth
            } else {
                ChannelId::PlethT
            }
        }
    };
    let ch = record.channel_mut(target).ok_or(SynthError::MissingChannel(target))?;
    corrupt(ch, tau, interval, kind, rng);
    if tau == AlertType::Spo2 && kind != ArtifactKind::NumericWaveformMismatch {
        for id in [ChannelId::EcgII, ChannelId::EcgIII] {
            if let Some(ch) = record.channel_mut(id) {
                corrupt(ch, tau, interval, ArtifactKind::NoiseBurst, rng);
            }
        }
    }
    Ok(())
}

fn corrupt(ch: &mut Channel, tau: AlertType, (start, end): (f64, f64), kind: ArtifactKind, rng: &mut ChaCha8Rng) {
    let fs = ch.fs();
    let (a, b) = index_span(start, end, fs);
    let range = ch.positions(a, b);
    let inside = ch.values()[range.clone()].to_vec();
    if inside.is_empty() {
        return;
    }
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let sd = (inside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    match kind {
        ArtifactKind::Flatline => ch.values_mut()[range].fill(mean),
        ArtifactKind::NoiseBurst => {
            let scale = 2.0 * sd.max(1e-3);
            for v in &mut ch.values_mut()[range] {
                *v = mean + noise(rng, scale);
            }
        }
        ArtifactKind::SensorDropout => {
            // Keep 2 s of every 10 s, so no run is long enough to analyze.
            let block = (10.0 * fs).round() as u64;
            let keep = (2.0 * fs).round() as u64;
            ch.retain(|i, _| i < a || i >= b || (i - a) % block < keep);
        }
        ArtifactKind::NumericWaveformMismatch => {
            let factor = match tau {
                AlertType::Rr => (31.5 / median_of(&inside)).max(2.5),
                AlertType::Spo2 => {
                    if rng.random::<bool>() {
                        1.5
                    } else {
                        0.6
                    }
                }
            };
            for v in &mut ch.values_mut()[range] {
                *v *= factor;
            }
        }
    }
}

fn patient_id(i: usize) -> String {
    format!("P{i:03}")
}

/// Alert types for a patient's slots: alternating, starting at random.
fn slot_types(n: usize, rng: &mut ChaCha8Rng) -> Vec<AlertType> {
    let first = rng.random::<bool>();
    (0..n)
        .map(|k| if (k % 2 == 0) == first { AlertType::Rr } else { AlertType::Spo2 })
        .collect()
}

/// One patient, fully determined by the cohort seed and the patient index.
pub fn generate_patient(spec: &CohortSpec, index: usize) -> Result<SyntheticPatient, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[index as u64]));
    let total = (spec.hours_per_patient * 3600.0).floor();
    let telemetric = rng.random::<f64>() < spec.telemetric_fraction;
    let ecg_fs = if rng.random::<f64>() < 0.15 { 500.0 } else { 250.0 };
    let with_ecg3 = rng.random::<f64>() < 0.7;
    let mut phys = Physiology {
        resp_base: rng.random_range(14.0..19.0),
        hr_base: rng.random_range(60.0..85.0),
        spo2_base: rng.random_range(95.5..98.5),
        wander_period: rng.random_range(600.0..1500.0),
        wander_phase: rng.random_range(0.0..2.0 * PI),
        resp_amp: rng.random_range(0.8..1.2),
        pleth_amp: rng.random_range(0.8..1.5),
        mod_depth: rng.random_range(0.2..0.3),
        effects: Vec::new(),
    };

    let slot = total / spec.events_per_patient as f64;
    let mut planted = Vec::new();
    for (k, tau) in slot_types(spec.events_per_patient, &mut rng).into_iter().enumerate() {
        let s0 = k as f64 * slot;
        let start = (s0 + rng.random_range(LEAD_S + 2.0 * RAMP_S..slot - TAIL_S - 480.0)).round();
        let duration = rng.random_range(330.0..480.0f64).round();
        let artifact = rng.random::<f64>() < spec.artifact_rate;
        let kind = artifact.then(|| spec.artifact_kinds[rng.random_range(0..spec.artifact_kinds.len())]);
        let y = if artifact { AlertClass::Artifact } else { AlertClass::Real };
        planted.push(PlantedEvent { tau, start, duration, y, kind });
        if !artifact {
            let end = start + duration;
            phys.effects.push(match tau {
                AlertType::Rr if rng.random::<f64>() < 0.2 => Effect {
                    start,
                    end,
                    resp_target: Some(rng.random_range(5.0..8.0)),
                    hr_shift: rng.random_range(-8.0..0.0),
                    spo2_target: None,
                },
                AlertType::Rr => Effect {
                    start,
                    end,
                    resp_target: Some(rng.random_range(32.0..40.0)),
                    hr_shift: rng.random_range(15.0..30.0),
                    spo2_target: None,
                },
                AlertType::Spo2 => Effect {
                    start,
                    end,
                    resp_target: (rng.random::<f64>() < 0.5).then(|| rng.random_range(22.0..27.0)),
                    hr_shift: rng.random_range(0.0..15.0),
                    spo2_target: Some(rng.random_range(83.0..88.0)),
                },
            });
        }
    }

    // Numerics at 1 Hz over the whole record.
    let n = total as usize;
    let mut rr = Vec::with_capacity(n);
    let mut hr = Vec::with_capacity(n);
    let mut spo2 = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64;
        rr.push(phys.resp_rate(t) + noise(&mut rng, 0.5));
        hr.push(phys.heart_rate(t) + noise(&mut rng, 1.0));
        spo2.push((phys.spo2(t) + noise(&mut rng, 0.5)).min(100.0));
    }
    // Numeric excursions that artifacts produce without any physiology behind them.
    for ev in planted.iter().filter(|e| e.y.is_artifact()) {
        let (a, b) = (ev.start as usize, (ev.end() as usize).min(n));
        match (ev.tau, ev.kind) {
            (AlertType::Rr, Some(ArtifactKind::NumericWaveformMismatch)) => {}
            (AlertType::Rr, Some(ArtifactKind::Flatline)) if rng.random::<bool>() => {
                rr[a..b].iter_mut().for_each(|v| *v = rng.random_range(2.0..8.0));
            }
            (AlertType::Rr, _) => rr[a..b].iter_mut().for_each(|v| *v = rng.random_range(31.0..50.0)),
            (AlertType::Spo2, kind) => {
                let target = rng.random_range(83.0..88.0);
                let erratic = kind == Some(ArtifactKind::SensorDropout);
                for (i, v) in spo2.iter_mut().enumerate().take(b + RAMP_S as usize).skip(a - RAMP_S as usize) {
                    let w = ramp(i as f64, ev.start, ev.end());
                    *v = if erratic && w >= 1.0 {
                        rng.random_range(70.0..89.0)
                    } else {
                        (*v * (1.0 - w) + (target + noise(&mut rng, 0.5)) * w).min(100.0)
                    };
                }
            }
        }
    }

    let oxi_id = if telemetric { ChannelId::Spo2T } else { ChannelId::Spo2 };
    let pleth_id = if telemetric { ChannelId::PlethT } else { ChannelId::Pleth };
    let pid = patient_id(index);
    let mut record = PatientRecord::new(pid.clone())?;
    let numeric = |id: ChannelId, values: Vec<f64>, rng: &mut ChaCha8Rng| {
        let (idx, val): (Vec<u64>, Vec<f64>) = values
            .into_iter()
            .enumerate()
            .filter(|_| rng.random::<f64>() >= NUMERIC_LOSS)
            .map(|(i, v)| (i as u64, v))
            .unzip();
        Channel::new(id, 1.0, idx, val)
    };
    record.insert(numeric(ChannelId::Rr, rr, &mut rng)?)?;
    record.insert(numeric(ChannelId::Hr, hr, &mut rng)?)?;
    record.insert(numeric(oxi_id, spo2, &mut rng)?)?;

    let mut resp = None;
    let mut pleth = None;
    let mut ecg2 = None;
    let mut ecg3 = None;
    for ev in &planted {
        let seg = Segment { start: (ev.start - LEAD_S).max(0.0), end: (ev.start + TAIL_S).min(total) };
        let (a, v) = resp_wave(&phys, &seg, &mut rng);
        append(&mut resp, a, v);
        let (pa, pv, ea, e2, e3) = cardiac_waves(&phys, &seg, ecg_fs, with_ecg3, &mut rng);
        append(&mut pleth, pa, pv);
        append(&mut ecg2, ea, e2);
        if with_ecg3 {
            append(&mut ecg3, ea, e3);
        }
    }
    for (id, fs, ch) in [
        (ChannelId::Resp, 62.5, resp),
        (pleth_id, 125.0, pleth),
        (ChannelId::EcgII, ecg_fs, ecg2),
        (ChannelId::EcgIII, ecg_fs, ecg3),
    ] {
        if let Some((idx, val)) = ch {
            record.insert(Channel::new(id, fs, idx, val)?)?;
        }
    }

    for ev in &planted {
        if let Some(kind) = ev.kind {
            inject_artifact(&mut record, ev.tau, (ev.start, ev.end().min(total)), kind, &mut rng)?;
        }
    }

    let criteria = AlertCriteria::default();
    let mut labels = Vec::new();
    let mut unmatched = Vec::new();
    for tau in [AlertType::Rr, AlertType::Spo2] {
        for det in detect_alert_events(&record, tau, &criteria)? {
            let hit = planted.iter().find(|p| {
                p.tau == tau && det.t < p.end() + RAMP_S && det.t + det.d > p.start - RAMP_S
            });
            match hit {
                Some(p) => labels.push(GroundTruthLabel { event_id: det.pid.clone(), y: p.y }),
                None => unmatched.push(det),
            }
        }
    }
    Ok(SyntheticPatient { record, planted, labels, unmatched })
}

/// Patient ids in generation order.
pub fn cohort_patient_ids(spec: &CohortSpec) -> Vec<String> {
    (0..spec.n_patients).map(patient_id).collect()
}

/// Every patient of the cohort, generated in parallel. Holds all waveforms in
/// memory; stream with [`generate_patient`] for large cohorts.
pub fn generate_cohort(spec: &CohortSpec) -> Result<(Vec<PatientRecord>, Vec<GroundTruthLabel>), SynthError> {
    spec.validate()?;
    let patients: Vec<SyntheticPatient> =
        (0..spec.n_patients).into_par_iter().map(|i| generate_patient(spec, i)).collect::<Result<_, _>>()?;
    let mut records = Vec::with_capacity(patients.len());
    let mut labels = Vec::new();
    for p in patients {
        records.push(p.record);
        labels.extend(p.labels);
    }
    Ok((records, labels))
}

pub const COHORT_FILE: &str = "cohort.json";

/// Writes the cohort as a manifest tree (one directory per patient), the
/// labels CSV and the cohort spec itself, generating one patient at a time.
/// Returns the number of labels written.
pub fn write_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<usize, SynthError> {
    spec.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut labels = Vec::new();
    for i in 0..spec.n_patients {
        let p = generate_patient(spec, i)?;
        write_patient_record(&p.record, &out_dir.join(p.record.patient_id()))?;
        labels.extend(p.labels);
    }
    write_labels(&labels, &out_dir.join(LABELS_FILE))?;
    let path = out_dir.join(COHORT_FILE);
    let text = serde_json::to_string_pretty(spec).expect("spec serializes") + "\n";
    fs::write(&path, text).map_err(io(&path))?;
    Ok(labels.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{channel_density, slice_window};
    use crate::dsp::amplitude_metric;

    fn small() -> CohortSpec {
        CohortSpec { n_patients: 2, hours_per_patient: 1.0, events_per_patient: 3, ..Default::default() }
    }

    #[test]
    fn spec_validation() {
        assert!(small().validate().is_ok());
        assert!(CohortSpec { n_patients: 1, ..small() }.validate().is_err());
        assert!(CohortSpec { artifact_rate: 1.5, ..small() }.validate().is_err());
        assert!(CohortSpec { events_per_patient: 4, ..small() }.validate().is_err());
        assert!(CohortSpec { artifact_kinds: vec![], ..small() }.validate().is_err());
    }

    #[test]
    fn ramp_shape() {
        assert_eq!(ramp(0.0, 100.0, 200.0), 0.0);
        assert_eq!(ramp(150.0, 100.0, 200.0), 1.0);
        assert!((ramp(95.0, 100.0, 200.0) - 0.5).abs() < 1e-12);
        assert_eq!(ramp(250.0, 100.0, 200.0), 0.0);
    }

    #[test]
    fn every_plant_is_detected_once() {
        for i in 0..4 {
            let p = generate_patient(&CohortSpec { artifact_rate: 0.5, ..small() }, i).unwrap();
            assert!(p.unmatched.is_empty(), "{:?}", p.unmatched);
            assert_eq!(p.labels.len(), p.planted.len());
        }
    }

    #[test]
    fn zero_rate_is_all_real() {
        let p = generate_patient(&CohortSpec { artifact_rate: 0.0, ..small() }, 0).unwrap();
        assert!(p.labels.iter().all(|l| l.y == AlertClass::Real));
    }

    fn resp_record() -> PatientRecord {
        let mut rec = PatientRecord::new("x").unwrap();
        let v: Vec<f64> = (0..62 * 200).map(|i| (2.0 * PI * 0.25 * i as f64 / 62.5).sin()).collect();
        rec.insert(Channel::contiguous(ChannelId::Resp, 62.5, 0, v).unwrap()).unwrap();
        rec.insert(Channel::contiguous(ChannelId::Rr, 1.0, 0, vec![15.0; 198]).unwrap()).unwrap();
        rec
    }

    #[test]
    fn flatline_and_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rec = resp_record();
        inject_artifact(&mut rec, AlertType::Rr, (20.0, 120.0), ArtifactKind::Flatline, &mut rng).unwrap();
        let view = slice_window(&rec, 20.0, 100.0);
        assert_eq!(amplitude_metric(view.channel(ChannelId::Resp).unwrap().values), 0.0);

        let mut rec = resp_record();
        inject_artifact(&mut rec, AlertType::Rr, (20.0, 120.0), ArtifactKind::SensorDropout, &mut rng).unwrap();
        let view = slice_window(&rec, 20.0, 100.0);
        let d = channel_density(&view, ChannelId::Resp).unwrap();
        assert!((d - 0.2).abs() <= 0.02, "{d}");
    }

    #[test]
    fn mismatch_scales_numeric_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rec = resp_record();
        let before = rec.channel(ChannelId::Resp).unwrap().values().to_vec();
        inject_artifact(&mut rec, AlertType::Rr, (20.0, 120.0), ArtifactKind::NumericWaveformMismatch, &mut rng)
            .unwrap();
        assert_eq!(rec.channel(ChannelId::Resp).unwrap().values(), before.as_slice());
        let rr = rec.channel(ChannelId::Rr).unwrap().values();
        assert_eq!(rr[50], 37.5);
        assert_eq!(rr[10], 15.0);
        assert!(inject_artifact(&mut rec, AlertType::Rr, (150.0, 400.0), ArtifactKind::Flatline, &mut rng).is_err());
        assert!(matches!(
            inject_artifact(&mut rec, AlertType::Spo2, (20.0, 30.0), ArtifactKind::Flatline, &mut rng),
            Err(SynthError::MissingChannel(ChannelId::PlethT))
        ));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_patient(&small(), 1).unwrap();
        let b = generate_patient(&small(), 1).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.labels, b.labels);
        let c = generate_patient(&CohortSpec { seed: 1, ..small() }, 1).unwrap();
        assert_ne!(a.record, c.record);
    }
}
