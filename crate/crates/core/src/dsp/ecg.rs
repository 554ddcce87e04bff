//! ECG cleaning and R-peak heart rate.

use super::{butterworth, detect_peaks, rate_from_intervals, Band, DspConfig, DspError};

/// Causal moving average, then the same pass run backwards (zero phase).
/// Averaging over one mains period nulls the mains fundamental.
pub fn moving_average_zero_phase(x: &[f64], len: usize) -> Vec<f64> {
    let pass = |input: &mut Vec<f64>| {
        let mut acc = 0.0;
        let src = input.clone();
        for i in 0..src.len() {
            acc += src[i];
            if i >= len {
                acc -= src[i - len];
            }
            input[i] = acc / (i + 1).min(len) as f64;
        }
    };
    let mut y = x.to_vec();
    if len <= 1 {
        return y;
    }
    pass(&mut y);
    y.reverse();
    pass(&mut y);
    y.reverse();
    y
}

/// High-pass baseline removal followed by mains suppression.
pub fn clean_ecg(ecg: &[f64], fs: f64, cfg: &DspConfig) -> Result<Vec<f64>, DspError> {
    let hp = butterworth(cfg.filter_order, cfg.ecg_highpass_hz, fs, Band::Highpass)?;
    let y = hp.filtfilt(ecg);
    let len = (fs / cfg.powerline_hz).round() as usize;
    Ok(moving_average_zero_phase(&y, len))
}

/// Median beat rate over the R peaks of the cleaned signal. Errors below the
/// minimum duration; `None` with fewer than two R peaks.
pub fn clean_ecg_and_rate_with(
    ecg: &[f64],
    fs: f64,
    cfg: &DspConfig,
) -> Result<Option<f64>, DspError> {
    let needed = (cfg.ecg_min_seconds * fs).ceil() as usize;
    if ecg.len() < needed {
        return Err(DspError::TooFewSamples { needed, got: ecg.len() });
    }
    let y = clean_ecg(ecg, fs, cfg)?;
    // Filtering a flat trace leaves rounding dust; do not hunt peaks in it.
    let scale = ecg.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 1e-9 * scale) {
        return Ok(None);
    }
    let r = detect_peaks(&y, fs, cfg.ecg_peaks.min_distance_s, cfg.ecg_peaks.prominence_fraction);
    Ok(rate_from_intervals(&r, fs))
}

pub fn clean_ecg_and_rate(ecg: &[f64], fs: f64) -> Result<Option<f64>, DspError> {
    clean_ecg_and_rate_with(ecg, fs, &DspConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ecg(fs: f64, secs: f64, hr_hz: f64, wander: f64) -> (Vec<f64>, Vec<f64>) {
        let n = (fs * secs) as usize;
        let mut spikes = Vec::new();
        let mut t = 0.3;
        while t < secs {
            spikes.push(t);
            t += 1.0 / hr_hz;
        }
        let x = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let ph = (hr_hz * (t - 0.3)).rem_euclid(1.0) / hr_hz;
                let r = (-((ph.min(1.0 / hr_hz - ph)) / 0.012).powi(2)).exp();
                let tw = 0.25 * (-((ph - 0.3) / 0.05).powi(2)).exp();
                r + tw + wander * (2.0 * PI * 0.1 * t).sin() + 0.05 * (2.0 * PI * 50.0 * t).sin()
            })
            .collect();
        (x, spikes)
    }

    #[test]
    fn spike_train_rate() {
        let (x, _) = ecg(250.0, 60.0, 1.2, 0.0);
        let hr = clean_ecg_and_rate(&x, 250.0).unwrap().unwrap();
        assert!((hr - 72.0).abs() <= 1.0, "{hr}");
    }

    #[test]
    fn baseline_wander_is_removed() {
        let (x, spikes) = ecg(500.0, 60.0, 1.2, 0.8);
        // Rate implied by the planted R-spike schedule.
        let planted = 60.0 * (spikes.len() - 1) as f64 / (spikes[spikes.len() - 1] - spikes[0]);
        let hr = clean_ecg_and_rate(&x, 500.0).unwrap().unwrap();
        assert!((hr - planted).abs() <= 2.0, "{hr} vs {planted}");
    }

    #[test]
    fn short_record_is_rejected() {
        let (x, _) = ecg(250.0, 5.0, 1.2, 0.0);
        assert!(matches!(clean_ecg_and_rate(&x, 250.0), Err(DspError::TooFewSamples { .. })));
    }

    #[test]
    fn flat_trace_has_no_rate() {
        assert_eq!(clean_ecg_and_rate(&[0.1; 5000], 250.0).unwrap(), None);
    }

    #[test]
    fn moving_average_nulls_mains() {
        let fs = 250.0;
        let x: Vec<f64> = (0..2500).map(|i| (2.0 * PI * 50.0 * i as f64 / fs).sin()).collect();
        let y = moving_average_zero_phase(&x, 5);
        assert!(y[100..2400].iter().all(|v| v.abs() < 1e-9));
    }
}
