//! Alert events detected on the RR and SpO2 numerics, and their analysis windows.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AlertClass, Channel, ChannelId, PatientRecord};

pub const WINDOW_SECONDS: f64 = 60.0;
pub const WINDOWS_PER_EVENT: usize = 3;

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("missing trigger channel for {tau} alerts in patient {patient_id}")]
    MissingTriggerChannel { patient_id: String, tau: AlertType },
    #[error("invalid alert criteria: {0}")]
    InvalidCriteria(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed alert window line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertType {
    #[serde(rename = "RR", alias = "rr")]
    Rr,
    #[serde(rename = "SPO2", alias = "spo2")]
    Spo2,
}

impl AlertType {
    pub const ALL: [AlertType; 2] = [AlertType::Rr, AlertType::Spo2];

    pub fn as_str(self) -> &'static str {
        match self {
            AlertType::Rr => "RR",
            AlertType::Spo2 => "SPO2",
        }
    }

    /// Lower-case form used in file names and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            AlertType::Rr => "rr",
            AlertType::Spo2 => "spo2",
        }
    }
}

impl fmt::Display for AlertType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlertType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rr" | "RR" => Ok(AlertType::Rr),
            "spo2" | "SPO2" | "SpO2" => Ok(AlertType::Spo2),
            _ => Err(format!("unknown alert type `{s}` (expected rr or spo2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertCriteria {
    /// Seconds.
    pub min_duration: f64,
    pub persistence: f64,
    /// Breaths/min.
    pub rr_low: f64,
    pub rr_high: f64,
    /// Percent.
    pub spo2_low: f64,
    /// Seconds.
    pub tolerance: f64,
    pub density: f64,
}

impl Default for AlertCriteria {
    fn default() -> Self {
        Self {
            min_duration: 300.0,
            persistence: 0.70,
            rr_low: 10.0,
            rr_high: 29.0,
            spo2_low: 90.0,
            tolerance: 300.0,
            density: 0.65,
        }
    }
}

impl AlertCriteria {
    pub fn validate(&self) -> Result<(), AlertError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(AlertError::InvalidCriteria(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("persistence", self.persistence)?;
        unit("density", self.density)?;
        if !(self.min_duration > 0.0) || !(self.tolerance >= 0.0) {
            return Err(AlertError::InvalidCriteria(
                "min_duration must be positive and tolerance non-negative".into(),
            ));
        }
        if !(self.rr_low < self.rr_high) {
            return Err(AlertError::InvalidCriteria("rr_low must be below rr_high".into()));
        }
        Ok(())
    }

    pub fn beyond(&self, tau: AlertType, value: f64) -> bool {
        match tau {
            AlertType::Rr => value < self.rr_low || value > self.rr_high,
            AlertType::Spo2 => value < self.spo2_low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub pid: String,
    pub patient_id: String,
    pub tau: AlertType,
    /// Start, seconds from record origin.
    pub t: f64,
    /// Seconds.
    pub d: f64,
    pub telemetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<AlertClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertWindow {
    pub pid: String,
    pub patient_id: String,
    pub tau: AlertType,
    pub window_index: usize,
    pub start: f64,
    pub duration: f64,
    pub telemetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<AlertClass>,
}

impl AlertWindow {
    /// Row identifier used in vote matrices and score tables.
    pub fn row_id(&self) -> String {
        format!("{}:{}", self.pid, self.window_index)
    }
}

/// Half-open sample-index span `[first, last]` of one accepted run.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Span {
    first: u64,
    last: u64,
    fs: f64,
}

impl Span {
    fn start(&self) -> f64 {
        self.first as f64 / self.fs
    }

    fn end(&self) -> f64 {
        (self.last + 1) as f64 / self.fs
    }
}

/// Groups beyond-threshold samples whose separation is under the tolerance,
/// then keeps the groups that meet duration, persistence and density.
fn scan_channel(ch: &Channel, tau: AlertType, c: &AlertCriteria) -> Vec<Span> {
    let fs = ch.fs();
    let idx = ch.indices();
    let val = ch.values();
    let beyond: Vec<usize> = (0..idx.len()).filter(|&k| c.beyond(tau, val[k])).collect();
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    for &k in &beyond {
        match clusters.last_mut() {
            Some((_, last)) if ((idx[k] - idx[*last] - 1) as f64) / fs < c.tolerance => *last = k,
            _ => clusters.push((k, k)),
        }
    }
    clusters
        .into_iter()
        .filter_map(|(a, b)| {
            let span = idx[b] - idx[a] + 1;
            let present = b - a + 1;
            let n_beyond = beyond.partition_point(|&k| k <= b) - beyond.partition_point(|&k| k < a);
            let duration = span as f64 / fs;
            let persistence = n_beyond as f64 / present as f64;
            let density = present as f64 / span as f64;
            (duration >= c.min_duration && persistence >= c.persistence && density >= c.density)
                .then_some(Span { first: idx[a], last: idx[b], fs })
        })
        .collect()
}

pub fn detect_alert_events(
    record: &PatientRecord,
    tau: AlertType,
    criteria: &AlertCriteria,
) -> Result<Vec<AlertEvent>, AlertError> {
    criteria.validate()?;
    // (start, end, telemetric)
    let mut found: Vec<(f64, f64, bool)> = Vec::new();
    let sources: &[(ChannelId, bool)] = match tau {
        AlertType::Rr => &[(ChannelId::Rr, false)],
        AlertType::Spo2 => &[(ChannelId::Spo2, false), (ChannelId::Spo2T, true)],
    };
    let mut any = false;
    for &(id, telemetric) in sources {
        if let Some(ch) = record.channel(id) {
            any = true;
            found.extend(scan_channel(ch, tau, criteria).iter().map(|s| (s.start(), s.end(), telemetric)));
        }
    }
    if !any {
        return Err(AlertError::MissingTriggerChannel {
            patient_id: record.patient_id().to_string(),
            tau,
        });
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // Cross-channel merge; within one channel the clustering already separates
    // runs by at least the tolerance.
    let mut merged: Vec<(f64, f64, bool)> = Vec::new();
    for (s, e, tel) in found {
        match merged.last_mut() {
            Some(last) if s - last.1 < criteria.tolerance => {
                last.1 = last.1.max(e);
                last.2 |= tel;
            }
            _ => merged.push((s, e, tel)),
        }
    }
    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(i, (t, end, telemetric))| AlertEvent {
            pid: format!("{}-{}-{}", record.patient_id(), tau, i),
            patient_id: record.patient_id().to_string(),
            tau,
            t,
            d: end - t,
            telemetric,
            y: None,
        })
        .collect())
}

pub fn windows_from_event(event: &AlertEvent) -> [AlertWindow; WINDOWS_PER_EVENT] {
    std::array::from_fn(|i| AlertWindow {
        pid: event.pid.clone(),
        patient_id: event.patient_id.clone(),
        tau: event.tau,
        window_index: i,
        start: event.t + WINDOW_SECONDS * i as f64,
        duration: WINDOW_SECONDS,
        telemetric: event.telemetric,
        y: event.y,
    })
}

pub fn write_windows_jsonl<W: Write>(windows: &[AlertWindow], mut out: W) -> Result<(), AlertError> {
    for w in windows {
        let line = serde_json::to_string(w).expect("alert window serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_windows_jsonl<R: BufRead>(input: R) -> Result<Vec<AlertWindow>, AlertError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AlertError::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr_record(values: &[Option<f64>]) -> PatientRecord {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = v {
                idx.push(i as u64);
                val.push(*v);
            }
        }
        let mut rec = PatientRecord::new("p1").unwrap();
        rec.insert(Channel::new(ChannelId::Rr, 1.0, idx, val).unwrap()).unwrap();
        rec
    }

    fn run(values: &[Option<f64>]) -> Vec<(f64, f64)> {
        detect_alert_events(&rr_record(values), AlertType::Rr, &AlertCriteria::default())
            .unwrap()
            .iter()
            .map(|e| (e.t, e.d))
            .collect()
    }

    #[test]
    fn seventy_two_percent_persistence_detects() {
        // 360 s run: beyond values interleaved so the first and last are beyond.
        let mut v = vec![Some(15.0); 100];
        let mut run_vals = vec![Some(8.0); 360];
        for k in 0..100 {
            run_vals[3 + k * 3] = Some(15.0);
        }
        v.extend(run_vals);
        v.extend(vec![Some(15.0); 100]);
        let got = run(&v);
        assert_eq!(got, vec![(100.0, 360.0)]);
    }

    #[test]
    fn sixty_percent_is_rejected() {
        let mut v = vec![Some(15.0); 50];
        for k in 0..400 {
            v.push(Some(if k % 5 < 3 || k == 399 { 8.0 } else { 15.0 }));
        }
        assert!(run(&v).is_empty());
    }

    #[test]
    fn close_runs_merge() {
        let mut v = vec![Some(15.0); 10];
        v.extend(vec![Some(35.0); 300]);
        v.extend(vec![Some(15.0); 200]);
        v.extend(vec![Some(35.0); 300]);
        v.extend(vec![Some(15.0); 10]);
        assert_eq!(run(&v), vec![(10.0, 800.0)]);
    }

    #[test]
    fn missing_channel_is_an_error() {
        let rec = PatientRecord::new("p").unwrap();
        let err = detect_alert_events(&rec, AlertType::Spo2, &AlertCriteria::default()).unwrap_err();
        assert!(err.to_string().contains("missing trigger channel"));
    }

    #[test]
    fn spo2_sources_merge_and_flag_telemetric() {
        let mut rec = PatientRecord::new("p").unwrap();
        let a: Vec<f64> = (0..1000).map(|i| if (100..450).contains(&i) { 85.0 } else { 97.0 }).collect();
        let b: Vec<f64> = (0..1000).map(|i| if (400..800).contains(&i) { 85.0 } else { 97.0 }).collect();
        rec.insert(Channel::contiguous(ChannelId::Spo2, 1.0, 0, a).unwrap()).unwrap();
        rec.insert(Channel::contiguous(ChannelId::Spo2T, 1.0, 0, b).unwrap()).unwrap();
        let ev = detect_alert_events(&rec, AlertType::Spo2, &AlertCriteria::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].t, ev[0].d, ev[0].telemetric), (100.0, 700.0, true));
        assert_eq!(ev[0].pid, "p-SPO2-0");
    }

    #[test]
    fn windows_follow_parent() {
        let ev = AlertEvent {
            pid: "x".into(),
            patient_id: "p".into(),
            tau: AlertType::Rr,
            t: 100.0,
            d: 400.0,
            telemetric: false,
            y: Some(AlertClass::Artifact),
        };
        let w = windows_from_event(&ev);
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![100.0, 160.0, 220.0]);
        assert!(w.iter().all(|w| w.y == Some(AlertClass::Artifact) && w.duration == 60.0));
        let mut buf = Vec::new();
        write_windows_jsonl(&w, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"y\":1"));
        assert_eq!(read_windows_jsonl(&buf[..]).unwrap(), w.to_vec());
    }
}
