//! Waveform estimators shared by labeling functions and featurization.
//!
//! Everything here is a pure function of its input samples. Estimators report
//! `None` instead of NaN when the data cannot support an estimate.

pub mod ecg;
pub mod estimates;
pub mod filter;
pub mod peaks;
pub mod pleth;
pub mod spectral;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ecg::clean_ecg_and_rate;
pub use estimates::{derive_estimates, DerivedEstimates, PulseEstimates};
pub use filter::{butterworth, Band, Padding, Sos};
pub use peaks::{detect_peaks, zigzag_extrema, Extremum, ExtremumKind};
pub use pleth::{derive_resp_from_pleth, natural_cubic_spline};
pub use spectral::{dominant_frequency, rate_from_primary_harmonic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid frequency band [{lo}, {hi}] Hz")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakParams {
    pub min_distance_s: f64,
    pub prominence_fraction: f64,
}

/// Estimator parameters; every field can be overridden from the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub resp_peaks: PeakParams,
    pub pleth_peaks: PeakParams,
    pub ecg_peaks: PeakParams,
    pub rr_band_hz: [f64; 2],
    pub hr_band_hz: [f64; 2],
    pub resp_lowpass_hz: f64,
    pub filter_order: usize,
    pub extrema_iqr_fraction: f64,
    pub amplitude_range_fraction: f64,
    pub ecg_highpass_hz: f64,
    pub ecg_min_seconds: f64,
    pub powerline_hz: f64,
    pub min_contiguous_s: f64,
    pub pleth_modulation_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            resp_peaks: PeakParams { min_distance_s: 1.0, prominence_fraction: 0.2 },
            pleth_peaks: PeakParams { min_distance_s: 0.3, prominence_fraction: 0.3 },
            ecg_peaks: PeakParams { min_distance_s: 0.25, prominence_fraction: 0.4 },
            rr_band_hz: [0.05, 1.0],
            hr_band_hz: [0.5, 3.0],
            resp_lowpass_hz: 2.0,
            filter_order: 5,
            extrema_iqr_fraction: 0.2,
            amplitude_range_fraction: 0.1,
            ecg_highpass_hz: 0.5,
            ecg_min_seconds: 10.0,
            powerline_hz: 50.0,
            min_contiguous_s: 10.0,
            pleth_modulation_floor: 0.01,
        }
    }
}

/// Removes the least-squares line. A constant input maps to exact zeros.
pub fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let x0 = x[0];
    let tbar = (n as f64 - 1.0) / 2.0;
    let mean = x.iter().map(|v| v - x0).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - tbar;
        sxy += dt * (v - x0 - mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - x0) - mean - slope * (i as f64 - tbar))
        .collect()
}

/// Detrend, zero-phase Butterworth low-pass, detrend again.
///
/// The input is detrended before filtering, so the ends are mirrored rather
/// than point-reflected; point reflection would shift the level past an end
/// that happens to sit on a crest. The second detrend strips the small slope
/// that edge effects can leave, so the output never carries a linear trend.
pub fn preprocess_resp_with(
    x: &[f64],
    fs: f64,
    cutoff_hz: f64,
    order: usize,
) -> Result<Vec<f64>, DspError> {
    if x.len() < 2 {
        return Err(DspError::TooFewSamples { needed: 2, got: x.len() });
    }
    let sos = butterworth(order, cutoff_hz, fs, Band::Lowpass)?;
    Ok(detrend(&sos.filtfilt_padded(&detrend(x), Padding::Even)))
}

/// [`preprocess_resp_with`] at 2 Hz, order 5.
pub fn preprocess_resp(x: &[f64], fs: f64) -> Result<Vec<f64>, DspError> {
    preprocess_resp_with(x, fs, 2.0, 5)
}

pub fn rate_from_peak_count(n_peaks: usize, window_s: f64) -> f64 {
    n_peaks as f64 * 60.0 / window_s
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Linear-interpolation quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-minute rate from the median spacing of successive event indices.
pub fn rate_from_intervals(indices: &[usize], fs: f64) -> Option<f64> {
    if indices.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = indices.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    median(&mut gaps).map(|g| 60.0 * fs / g)
}

/// Breath rate from alternating extrema of the preprocessed waveform.
/// Swings below `iqr_fraction` of the interquartile range are treated as ripple.
pub fn rate_from_extrema_with(
    x: &[f64],
    fs: f64,
    cfg: &DspConfig,
) -> Result<Option<f64>, DspError> {
    let y = preprocess_resp_with(x, fs, cfg.resp_lowpass_hz, cfg.filter_order)?;
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let threshold = cfg.extrema_iqr_fraction * iqr;
    if !(threshold > 0.0) {
        return Ok(None);
    }
    let maxima: Vec<usize> = zigzag_extrema(&y, threshold)
        .into_iter()
        .filter(|e| e.kind == ExtremumKind::Max)
        .map(|e| e.index)
        .collect();
    Ok(rate_from_intervals(&maxima, fs))
}

pub fn rate_from_extrema(x: &[f64], fs: f64) -> Result<Option<f64>, DspError> {
    rate_from_extrema_with(x, fs, &DspConfig::default())
}

/// Median peak-to-following-trough swing; 0 when no full cycle is found.
pub fn amplitude_metric_with(x: &[f64], range_fraction: f64) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return 0.0;
    }
    let ext = zigzag_extrema(x, range_fraction * range);
    let mut swings: Vec<f64> = ext
        .windows(2)
        .filter(|w| w[0].kind == ExtremumKind::Max && w[1].kind == ExtremumKind::Min)
        .map(|w| w[0].value - w[1].value)
        .collect();
    median(&mut swings).unwrap_or(0.0)
}

pub fn amplitude_metric(x: &[f64]) -> f64 {
    amplitude_metric_with(x, DspConfig::default().amplitude_range_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(f: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    fn amplitude(x: &[f64]) -> f64 {
        let mid = &x[x.len() / 4..3 * x.len() / 4];
        mid.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn detrend_removes_lines_exactly_for_constants() {
        assert!(detrend(&[4.5; 17]).iter().all(|&v| v == 0.0));
        let y = detrend(&(0..50).map(|i| 2.0 + 0.5 * i as f64).collect::<Vec<_>>());
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_resp_becomes_zeros() {
        let y = preprocess_resp(&[7.0; 600], 62.5).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(preprocess_resp(&[1.0], 62.5).is_err());
        assert!(preprocess_resp(&[1.0; 100], 4.0).is_err());
    }

    #[test]
    fn passband_tone_keeps_amplitude() {
        let fs = 62.5;
        let x = sine(0.3, fs, 3750, 1.0);
        let y = preprocess_resp(&x, fs).unwrap();
        // Two passes apply the squared magnitude to the detrended input.
        let gain = filter::butterworth_gain_sq(5, 2.0, fs, Band::Lowpass, 0.3);
        let d = detrend(&x);
        for i in 200..3550 {
            assert!((y[i] - gain * d[i]).abs() < 0.02 * amplitude(&d));
        }
    }

    #[test]
    fn stopband_tone_is_crushed() {
        let fs = 62.5;
        let y = preprocess_resp(&sine(10.0, fs, 3750, 1.0), fs).unwrap();
        // Two passes square the single-pass power gain.
        let analytic_db = 10.0 * filter::butterworth_gain_sq(5, 2.0, fs, Band::Lowpass, 10.0).log10() * 2.0;
        let got_db = 20.0 * amplitude(&y).log10();
        assert!(analytic_db <= -60.0);
        assert!(got_db <= -60.0, "{got_db}");
    }

    #[test]
    fn output_has_no_trend() {
        let fs = 62.5;
        let x: Vec<f64> = (0..3000)
            .map(|i| 3.0 + 0.01 * i as f64 + (2.0 * PI * 0.27 * i as f64 / fs).sin())
            .collect();
        let y = preprocess_resp(&x, fs).unwrap();
        let slope = {
            let n = y.len() as f64;
            let tbar = (n - 1.0) / 2.0;
            let (mut a, mut b) = (0.0, 0.0);
            for (i, v) in y.iter().enumerate() {
                a += (i as f64 - tbar) * v;
                b += (i as f64 - tbar).powi(2);
            }
            a / b
        };
        assert!(slope.abs() < 1e-9);
    }

    #[test]
    fn peak_count_rates() {
        assert_eq!(rate_from_peak_count(15, 60.0), 15.0);
        assert_eq!(rate_from_peak_count(0, 60.0), 0.0);
        assert_eq!(rate_from_peak_count(36, 30.0), 72.0);
    }

    #[test]
    fn extrema_rate_on_tone_and_flat() {
        let r = rate_from_extrema(&sine(0.3, 62.5, 3750, 1.0), 62.5).unwrap().unwrap();
        assert!((r - 18.0).abs() < 1.0, "{r}");
        assert_eq!(rate_from_extrema(&[2.0; 3750], 62.5).unwrap(), None);
    }

    #[test]
    fn extrema_rate_with_amplitude_jitter() {
        let fs = 62.5;
        // Amplitude changes by up to 20% from one breath to the next.
        let jitter = [1.0, 0.85, 1.15, 0.9, 1.2, 0.8, 1.05, 0.95];
        let x: Vec<f64> = (0..3750)
            .map(|i| {
                let t = i as f64 / fs;
                let cycle = (0.3 * t).floor() as usize;
                jitter[cycle % jitter.len()] * (2.0 * PI * 0.3 * t).sin()
            })
            .collect();
        // Brute-force count of sign-alternating crests in the raw signal.
        let crests = (1..x.len() - 1).filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.5).count();
        let brute = crests as f64 * 60.0 / 60.0;
        let r = rate_from_extrema(&x, fs).unwrap().unwrap();
        assert!((r - 18.0).abs() <= 2.0 && (brute - 18.0).abs() <= 1.0, "{r} {brute}");
    }

    #[test]
    fn amplitude_metric_cases() {
        let a = amplitude_metric(&sine(0.5, 62.5, 3000, 1.5));
        assert!((a - 3.0).abs() < 1e-3);
        assert_eq!(amplitude_metric(&[1.0; 50]), 0.0);
        // Pulses alternating between heights 1 and 3 over a zero baseline.
        let mut x = Vec::new();
        for k in 0..20 {
            let h = if k % 2 == 0 { 1.0 } else { 3.0 };
            x.extend([0.0, h * 0.5, h, h * 0.5, 0.0, 0.0]);
        }
        x.push(0.0);
        let brute: Vec<f64> = (0..20).map(|k| if k % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let mut swings = brute.clone();
        let want = median(&mut swings).unwrap();
        assert_eq!(amplitude_metric(&x), want);
        assert_eq!(want, 2.0);
    }

    #[test]
    fn amplitude_metric_even_median_uses_midpoint() {
        // Swings of 2 and 6 in equal number.
        let mut x = vec![0.0];
        for k in 0..10 {
            let (hi, lo) = if k % 2 == 0 { (2.0, 0.0) } else { (6.0, 0.0) };
            x.extend([hi / 2.0, hi, hi / 2.0, lo]);
        }
        x.push(1.0);
        assert_eq!(amplitude_metric(&x), 4.0);
    }

    proptest! {
        #[test]
        fn power_of_two_scaling_is_exact(k in -4i32..5, f in 0.15f64..0.6) {
            let fs = 62.5;
            let c = 2f64.powi(k);
            let x = sine(f, fs, 2500, 1.0);
            let y: Vec<f64> = x.iter().map(|v| v * c).collect();
            prop_assert_eq!(rate_from_extrema(&x, fs).unwrap(), rate_from_extrema(&y, fs).unwrap());
            prop_assert_eq!(
                rate_from_primary_harmonic(&x, fs, [0.05, 1.0]).unwrap(),
                rate_from_primary_harmonic(&y, fs, [0.05, 1.0]).unwrap()
            );
            let px = preprocess_resp(&x, fs).unwrap();
            let py = preprocess_resp(&y, fs).unwrap();
            prop_assert_eq!(detect_peaks(&px, fs, 1.0, 0.2), detect_peaks(&py, fs, 1.0, 0.2));
            prop_assert_eq!(amplitude_metric(&y), c * amplitude_metric(&x));
        }

        #[test]
        fn circular_shift_keeps_rates(shift in 0usize..3750, cycles in 9u32..36) {
            // Whole cycles in the window, so the rotation is a pure time shift.
            let fs = 62.5;
            let f = cycles as f64 / 60.0;
            let x = sine(f, fs, 3750, 1.0);
            let mut y = x.clone();
            y.rotate_left(shift);
            let fx = rate_from_primary_harmonic(&x, fs, [0.05, 1.0]).unwrap().unwrap();
            let fy = rate_from_primary_harmonic(&y, fs, [0.05, 1.0]).unwrap().unwrap();
            prop_assert!((fx - fy).abs() < 1.0);
            let ex = rate_from_extrema(&x, fs).unwrap().unwrap();
            let ey = rate_from_extrema(&y, fs).unwrap().unwrap();
            prop_assert!((ex - ey).abs() < 1.5);
            let nx = detect_peaks(&preprocess_resp(&x, fs).unwrap(), fs, 1.0, 0.2).len();
            let ny = detect_peaks(&preprocess_resp(&y, fs).unwrap(), fs, 1.0, 0.2).len();
            prop_assert!(nx.abs_diff(ny) <= 1);
        }
    }
}
