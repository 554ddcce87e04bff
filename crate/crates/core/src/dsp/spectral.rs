//! Bohman-windowed periodogram and dominant-frequency search.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{detrend, DspError};

pub const MIN_SPECTRAL_SAMPLES: usize = 64;

/// Symmetric Bohman window of length `n` (zero at both ends).
pub fn bohman(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let x = (-1.0 + 2.0 * i as f64 / (n - 1) as f64).abs();
            if x >= 1.0 {
                0.0
            } else {
                (1.0 - x) * (PI * x).cos() + (PI * x).sin() / PI
            }
        })
        .collect()
}

/// One-sided power spectrum `|X_k|^2` for `k = 0..=nfft/2`.
pub fn periodogram(x: &[f64], nfft: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    fft.process(&mut buf);
    buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Frequency (Hz) of the strongest spectral line in `[f_lo, f_hi]`, refined
/// below one bin by a parabola through the peak and its neighbours. The
/// signal is detrended, Bohman-windowed and zero-padded to at least four times
/// its length. `None` when the band carries no power.
pub fn dominant_frequency(x: &[f64], fs: f64, band: [f64; 2]) -> Result<Option<f64>, DspError> {
    let [f_lo, f_hi] = band;
    if x.len() < MIN_SPECTRAL_SAMPLES {
        return Err(DspError::TooFewSamples { needed: MIN_SPECTRAL_SAMPLES, got: x.len() });
    }
    if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= fs / 2.0) {
        return Err(DspError::InvalidBand { lo: f_lo, hi: f_hi });
    }
    let w = bohman(x.len());
    let y: Vec<f64> = detrend(x).iter().zip(&w).map(|(a, b)| a * b).collect();
    let nfft = (4 * x.len()).next_power_of_two();
    let p = periodogram(&y, nfft);
    let df = fs / nfft as f64;
    let k_lo = (f_lo / df).ceil() as usize;
    let k_hi = ((f_hi / df).floor() as usize).min(p.len() - 1);
    if k_lo > k_hi {
        return Err(DspError::InvalidBand { lo: f_lo, hi: f_hi });
    }
    let mut k = k_lo;
    for i in k_lo..=k_hi {
        if p[i] > p[k] {
            k = i;
        }
    }
    if !(p[k] > 0.0) || !p[k].is_finite() {
        return Ok(None);
    }
    let mut offset = 0.0;
    if k > 0 && k + 1 < p.len() {
        let (a, b, c) = (p[k - 1], p[k], p[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(Some((k as f64 + offset) * df))
}

/// Per-minute rate of the dominant frequency in `band`.
pub fn rate_from_primary_harmonic(
    x: &[f64],
    fs: f64,
    band: [f64; 2],
) -> Result<Option<f64>, DspError> {
    Ok(dominant_frequency(x, fs, band)?.map(|f| 60.0 * f))
}
