//! Peak picking by topographic prominence and minimum spacing, plus a
//! hysteresis extrema tracker used for breath counting and swing amplitudes.

/// Local maxima (plateaus report their midpoint), ascending.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    let mut i = 1;
    while i < n - 1 {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < n - 1 && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                out.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Height of a peak above the higher of its two bounding valleys.
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..=peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Peaks with prominence at least `prominence_fraction * (max - min)` and
/// spaced at least `min_distance_s` apart. Taller peaks win spacing conflicts;
/// among equal heights the earlier one wins.
pub fn detect_peaks(x: &[f64], fs: f64, min_distance_s: f64, prominence_fraction: f64) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return Vec::new();
    }
    let floor = prominence_fraction * range;
    let peaks: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| prominence(x, p) >= floor)
        .collect();

    let distance = ((min_distance_s * fs).ceil() as usize).max(1);
    if distance <= 1 || peaks.len() < 2 {
        return peaks;
    }
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
    let mut keep = vec![true; peaks.len()];
    for &j in &order {
        if !keep[j] {
            continue;
        }
        let mut k = j;
        while k > 0 && peaks[j] - peaks[k - 1] < distance {
            keep[k - 1] = false;
            k -= 1;
        }
        let mut k = j + 1;
        while k < peaks.len() && peaks[k] - peaks[j] < distance {
            keep[k] = false;
            k += 1;
        }
    }
    peaks
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub index: usize,
    pub value: f64,
    pub kind: ExtremumKind,
}

/// Alternating maxima and minima whose successive swings are at least
/// `threshold`. Extrema sitting on the first or last sample are edges rather
/// than turning points and are not reported.
pub fn zigzag_extrema(x: &[f64], threshold: f64) -> Vec<Extremum> {
    let mut out = Vec::new();
    if x.len() < 2 || !(threshold > 0.0) {
        return out;
    }
    let mut hi = (0usize, x[0]);
    let mut lo = (0usize, x[0]);
    // Some(true) while climbing towards a maximum, Some(false) while falling.
    let mut rising: Option<bool> = None;
    let mut cand = (0usize, x[0]);
    for (i, &v) in x.iter().enumerate().skip(1) {
        match rising {
            None => {
                if v > hi.1 {
                    hi = (i, v);
                }
                if v < lo.1 {
                    lo = (i, v);
                }
                if hi.1 - lo.1 >= threshold {
                    if hi.0 > lo.0 {
                        out.push(Extremum { index: lo.0, value: lo.1, kind: ExtremumKind::Min });
                        rising = Some(true);
                        cand = hi;
                    } else {
                        out.push(Extremum { index: hi.0, value: hi.1, kind: ExtremumKind::Max });
                        rising = Some(false);
                        cand = lo;
                    }
                }
            }
            Some(true) => {
                if v > cand.1 {
                    cand = (i, v);
                } else if cand.1 - v >= threshold {
                    out.push(Extremum { index: cand.0, value: cand.1, kind: ExtremumKind::Max });
                    rising = Some(false);
                    cand = (i, v);
                }
            }
            Some(false) => {
                if v < cand.1 {
                    cand = (i, v);
                } else if v - cand.1 >= threshold {
                    out.push(Extremum { index: cand.0, value: cand.1, kind: ExtremumKind::Min });
                    rising = Some(true);
                    cand = (i, v);
                }
            }
        }
    }
    if let Some(up) = rising {
        if cand.0 + 1 < x.len() {
            let kind = if up { ExtremumKind::Max } else { ExtremumKind::Min };
            out.push(Extremum { index: cand.0, value: cand.1, kind });
        }
    }
    if out.first().is_some_and(|e| e.index == 0) {
        out.remove(0);
    }
    out
}
