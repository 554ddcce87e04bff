//! Respiratory envelope derived from the pulse amplitudes of a pleth waveform.

use super::{detect_peaks, PeakParams};

pub const MIN_ENVELOPE_PEAKS: usize = 4;

/// Natural cubic spline through `(xs, ys)` evaluated at `at`.
/// `xs` must be strictly increasing with at least two knots.
pub fn natural_cubic_spline(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2 && ys.len() == n, "spline needs matching knots");
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // Second derivatives m[0] = m[n-1] = 0; tridiagonal solve for the interior.
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 1..n - 1 {
            diag[i - 1] = 2.0 * (h[i - 1] + h[i]);
            upper[i - 1] = h[i];
            rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        // Thomas algorithm; the lower diagonal entry for row r is h[r].
        for r in 1..k {
            let w = h[r] / diag[r - 1];
            diag[r] -= w * upper[r - 1];
            rhs[r] -= w * rhs[r - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for r in (0..k - 1).rev() {
            m[r + 1] = (rhs[r] - upper[r] * m[r + 2]) / diag[r];
        }
    }
    let mut seg = 0;
    at.iter()
        .map(|&x| {
            while seg + 2 < n && x > xs[seg + 1] {
                seg += 1;
            }
            while seg > 0 && x < xs[seg] {
                seg -= 1;
            }
            let (x0, x1) = (xs[seg], xs[seg + 1]);
            let hh = x1 - x0;
            let a = (x1 - x) / hh;
            let b = (x - x0) / hh;
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hh * hh / 6.0
        })
        .collect()
}

/// Sub-sample peak position and height from a parabola through three samples.
pub fn refine_tip(x: &[f64], p: usize) -> (f64, f64) {
    if p == 0 || p + 1 >= x.len() {
        return (p as f64, x[p]);
    }
    let (a, b, c) = (x[p - 1], x[p], x[p + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return (p as f64, b);
    }
    let d = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
    (p as f64 + d, b - 0.25 * (a - c) * d)
}

/// Amplitude envelope through the pulse tips, sampled at every integer index
/// between the first and last tip. `None` with fewer than four pulses.
pub fn derive_resp_from_pleth(pleth: &[f64], fs: f64, peaks: PeakParams) -> Option<Vec<f64>> {
    let idx = detect_peaks(pleth, fs, peaks.min_distance_s, peaks.prominence_fraction);
    if idx.len() < MIN_ENVELOPE_PEAKS {
        return None;
    }
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &p in &idx {
        let (t, v) = refine_tip(pleth, p);
        if xs.last().is_some_and(|&last| t <= last) {
            continue;
        }
        xs.push(t);
        ys.push(v);
    }
    if xs.len() < MIN_ENVELOPE_PEAKS {
        return None;
    }
    let first = xs[0].ceil() as usize;
    let last = xs[xs.len() - 1].floor() as usize;
    let at: Vec<f64> = (first..=last).map(|i| i as f64).collect();
    Some(natural_cubic_spline(&xs, &ys, &at))
}
