//! All waveform-derived quantities for one analysis window, computed once and
//! shared by labeling functions and featurization.

use crate::data::{ChannelId, WindowView};

use super::ecg::clean_ecg_and_rate_with;
use super::{
    amplitude_metric_with, derive_resp_from_pleth, detect_peaks, preprocess_resp_with,
    quantile_sorted, rate_from_extrema_with, rate_from_intervals, rate_from_peak_count,
    rate_from_primary_harmonic, DspConfig,
};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PulseEstimates {
    /// Pulse rate from the peak count over the segment.
    pub hr_peaks: Option<f64>,
    /// Pulse rate from the dominant frequency.
    pub hr_fft: Option<f64>,
    /// Pulse rate from the median inter-beat interval.
    pub hr_intervals: Option<f64>,
    /// Median peak-to-trough swing.
    pub pulsatility: Option<f64>,
    /// 95th minus 5th percentile of the segment.
    pub height: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivedEstimates {
    pub resp_peak_rate: Option<f64>,
    pub resp_fft_rate: Option<f64>,
    pub resp_extrema_rate: Option<f64>,
    pub resp_height: Option<f64>,
    pub pleth_rr_fft: Option<f64>,
    pub pleth_rr_extrema: Option<f64>,
    pub hr_ecg2: Option<f64>,
    pub hr_ecg3: Option<f64>,
    pub pleth: PulseEstimates,
    pub pleth_t: PulseEstimates,
}

impl DerivedEstimates {
    pub fn pulse(&self, id: ChannelId) -> Option<&PulseEstimates> {
        match id {
            ChannelId::Pleth => Some(&self.pleth),
            ChannelId::PlethT => Some(&self.pleth_t),
            _ => None,
        }
    }

    /// Envelope-derived breath rate, preferring the spectral estimate.
    pub fn pleth_rr(&self) -> Option<f64> {
        self.pleth_rr_fft.or(self.pleth_rr_extrema)
    }
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite() && *x >= 0.0)
}

/// Longest gap-free stretch of a channel, if it spans at least the minimum.
fn segment<'a>(view: &WindowView<'a>, id: ChannelId, cfg: &DspConfig) -> Option<(&'a [f64], f64)> {
    let slice = view.channel(id)?;
    let seg = slice.longest_contiguous();
    let needed = (cfg.min_contiguous_s * slice.fs).ceil() as usize;
    (seg.len() >= needed.max(2)).then_some((seg, slice.fs))
}

fn resp_estimates(seg: &[f64], fs: f64, cfg: &DspConfig, out: &mut DerivedEstimates) {
    let Ok(pre) = preprocess_resp_with(seg, fs, cfg.resp_lowpass_hz, cfg.filter_order) else {
        return;
    };
    let p = cfg.resp_peaks;
    let peaks = detect_peaks(&pre, fs, p.min_distance_s, p.prominence_fraction);
    out.resp_peak_rate = finite(Some(rate_from_peak_count(peaks.len(), seg.len() as f64 / fs)));
    out.resp_fft_rate = finite(rate_from_primary_harmonic(&pre, fs, cfg.rr_band_hz).ok().flatten());
    out.resp_extrema_rate = finite(rate_from_extrema_with(seg, fs, cfg).ok().flatten());
    out.resp_height = finite(Some(amplitude_metric_with(&pre, cfg.amplitude_range_fraction)));
}

fn pulse_estimates(seg: &[f64], fs: f64, cfg: &DspConfig) -> PulseEstimates {
    let p = cfg.pleth_peaks;
    let peaks = detect_peaks(seg, fs, p.min_distance_s, p.prominence_fraction);
    let mut sorted = seg.to_vec();
    sorted.sort_by(f64::total_cmp);
    PulseEstimates {
        hr_peaks: finite(Some(rate_from_peak_count(peaks.len(), seg.len() as f64 / fs))),
        hr_fft: finite(rate_from_primary_harmonic(seg, fs, cfg.hr_band_hz).ok().flatten()),
        hr_intervals: finite(rate_from_intervals(&peaks, fs)),
        pulsatility: finite(Some(amplitude_metric_with(seg, cfg.amplitude_range_fraction))),
        height: finite(Some(quantile_sorted(&sorted, 0.95) - quantile_sorted(&sorted, 0.05))),
    }
}

/// Breath rate from the pulse-amplitude envelope. The envelope must show at
/// least `pleth_modulation_floor` relative variation to count as modulated.
fn pleth_rr(seg: &[f64], fs: f64, cfg: &DspConfig) -> (Option<f64>, Option<f64>) {
    let Some(env) = derive_resp_from_pleth(seg, fs, cfg.pleth_peaks) else {
        return (None, None);
    };
    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let sd = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd >= cfg.pleth_modulation_floor * mean.abs()) || sd == 0.0 {
        return (None, None);
    }
    let fft = rate_from_primary_harmonic(&env, fs, cfg.rr_band_hz).ok().flatten();
    let ext = rate_from_extrema_with(&env, fs, cfg).ok().flatten();
    (finite(fft), finite(ext))
}

pub fn derive_estimates(view: &WindowView<'_>, cfg: &DspConfig) -> DerivedEstimates {
    let mut out = DerivedEstimates::default();
    if let Some((seg, fs)) = segment(view, ChannelId::Resp, cfg) {
        resp_estimates(seg, fs, cfg, &mut out);
    }
    if let Some((seg, fs)) = segment(view, ChannelId::Pleth, cfg) {
        out.pleth = pulse_estimates(seg, fs, cfg);
        (out.pleth_rr_fft, out.pleth_rr_extrema) = pleth_rr(seg, fs, cfg);
    }
    if let Some((seg, fs)) = segment(view, ChannelId::PlethT, cfg) {
        out.pleth_t = pulse_estimates(seg, fs, cfg);
    }
    if let Some((seg, fs)) = segment(view, ChannelId::EcgII, cfg) {
        out.hr_ecg2 = finite(clean_ecg_and_rate_with(seg, fs, cfg).ok().flatten());
    }
    if let Some((seg, fs)) = segment(view, ChannelId::EcgIII, cfg) {
        out.hr_ecg3 = finite(clean_ecg_and_rate_with(seg, fs, cfg).ok().flatten());
    }
    out
}
