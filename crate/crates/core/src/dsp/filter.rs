//! Butterworth IIR design as second-order sections and zero-phase filtering.

use std::f64::consts::PI;

use super::DspError;

/// One biquad: `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn is_first_order(&self) -> bool {
        self.b[2] == 0.0 && self.a[1] == 0.0
    }

    /// Steady-state DF2T state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * g;
        let z1 = b1 - a1 * g + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Lowpass,
    Highpass,
}

/// How the signal is extended past its ends before forward-backward filtering.
/// Odd extension preserves a linear trend through the edge; even extension
/// (mirror) preserves the local level, which suits already-detrended input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Odd,
    Even,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

#[derive(Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex {
            re: (self.re * o.re + self.im * o.im) / d,
            im: (self.im * o.re - self.re * o.im) / d,
        }
    }
}

/// Digital Butterworth filter via the bilinear transform with prewarping.
pub fn butterworth(order: usize, cutoff_hz: f64, fs: f64, band: Band) -> Result<Sos, DspError> {
    if order == 0 {
        return Err(DspError::InvalidFilter("order must be at least 1".into()));
    }
    if !(fs > 0.0) || !(cutoff_hz > 0.0) || cutoff_hz >= fs / 2.0 {
        return Err(DspError::InvalidFilter(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, fs/2) for fs {fs} Hz"
        )));
    }
    let k = 2.0 * fs;
    let wc = k * (PI * cutoff_hz / fs).tan();
    let n = order as f64;

    let bilinear = |s: Complex| {
        Complex { re: k + s.re, im: s.im }.div(Complex { re: k - s.re, im: -s.im })
    };
    let analog_pole = |i: usize| {
        let ang = PI * (2.0 * i as f64 + n + 1.0) / (2.0 * n);
        let p = Complex { re: ang.cos(), im: ang.sin() };
        match band {
            Band::Lowpass => Complex { re: wc * p.re, im: wc * p.im },
            // 1/p for a unit-circle pole is its conjugate.
            Band::Highpass => Complex { re: wc * p.re, im: -wc * p.im },
        }
    };
    let (zb1, zb2) = match band {
        Band::Lowpass => (2.0, 1.0),
        Band::Highpass => (-2.0, 1.0),
    };

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let z = bilinear(analog_pole(i));
        let a = [-2.0 * z.re, z.re * z.re + z.im * z.im];
        sections.push(normalize(Biquad { b: [1.0, zb1, zb2], a }, band));
    }
    if order % 2 == 1 {
        let z = bilinear(analog_pole(order / 2));
        let b1 = if band == Band::Lowpass { 1.0 } else { -1.0 };
        sections.push(normalize(Biquad { b: [1.0, b1, 0.0], a: [-z.re, 0.0] }, band));
    }
    Ok(Sos { sections })
}

fn normalize(mut s: Biquad, band: Band) -> Biquad {
    let g = match band {
        Band::Lowpass => (1.0 + s.a[0] + s.a[1]) / (s.b[0] + s.b[1] + s.b[2]),
        Band::Highpass => (1.0 - s.a[0] + s.a[1]) / (s.b[0] - s.b[1] + s.b[2]),
    };
    for c in &mut s.b {
        *c *= g;
    }
    s
}

/// Closed-form squared magnitude of a digital Butterworth response at `f_hz`.
pub fn butterworth_gain_sq(order: usize, cutoff_hz: f64, fs: f64, band: Band, f_hz: f64) -> f64 {
    let r = (PI * f_hz / fs).tan() / (PI * cutoff_hz / fs).tan();
    let r = match band {
        Band::Lowpass => r,
        Band::Highpass => 1.0 / r,
    };
    1.0 / (1.0 + r.powi(2 * order as i32))
}

impl Sos {
    /// Direct-form II transposed cascade with explicit initial states.
    fn run(&self, x: &mut [f64], init: Option<(&[[f64; 2]], f64)>) {
        for (si, s) in self.sections.iter().enumerate() {
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            let (mut z1, mut z2) = match init {
                Some((zi, scale)) => (zi[si][0] * scale, zi[si][1] * scale),
                None => (0.0, 0.0),
            };
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.run(&mut out, None);
        out
    }

    /// Cascade steady-state for a unit step, accounting for upstream section gains.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    fn default_padlen(&self) -> usize {
        let first_order = self.sections.iter().filter(|s| s.is_first_order()).count();
        3 * (2 * self.sections.len() + 1 - first_order)
    }

    /// Samples for the slowest pole to decay by 1e-4. Padding this long keeps
    /// start-up transients out of the returned samples.
    fn settle_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(|s| if s.is_first_order() { s.a[0].abs() } else { s.a[1].abs().sqrt() })
            .fold(0.0f64, f64::max);
        if r <= 0.0 || r >= 1.0 {
            return 0;
        }
        ((1e-4f64).ln() / r.ln()).ceil() as usize
    }

    /// Zero-phase forward-backward filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        self.filtfilt_padded(x, Padding::Odd)
    }

    pub fn filtfilt_padded(&self, x: &[f64], padding: Padding) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.default_padlen().max(self.settle_len()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        match padding {
            Padding::Odd => {
                ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
                ext.extend_from_slice(x);
                ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
            }
            Padding::Even => {
                ext.extend((1..=pad).rev().map(|i| x[i]));
                ext.extend_from_slice(x);
                ext.extend((1..=pad).map(|i| x[n - 1 - i]));
            }
        }

        let zi = self.step_states();
        let x0 = ext[0];
        self.run(&mut ext, Some((&zi, x0)));
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, Some((&zi, y0)));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
