//! Oxygen-saturation alert heuristics.

use crate::data::ChannelId;

use super::{agreement_vote, LabelingFunction, LfConfig, Vote, WindowContext};

pub const SPO2_LF_NAMES: [&str; 11] = [
    "hr_ecg2_vs_numeric",
    "hr_ecg3_vs_pleth",
    "hr_plethpeaks_vs_numeric",
    "hr_plethfft_vs_numeric",
    "hr_plethT_vs_numeric",
    "pleth_low_pulsatility",
    "plethT_low_pulsatility",
    "tachypnea_support",
    "spo2_numeric_unstable",
    "pleth_missing",
    "cross_hr_consensus",
];

/// Pleth-derived pulse rate, preferring the bedside channel over telemetry.
fn pleth_hr(ctx: &WindowContext<'_>) -> Option<f64> {
    ctx.derived.pleth.hr_peaks.or(ctx.derived.pleth_t.hr_peaks)
}

/// The oximetry channel that matches the window's source, falling back to the other.
fn oximetry(ctx: &WindowContext<'_>, bedside: ChannelId, telemetric: ChannelId) -> ChannelId {
    let (first, second) = if ctx.window.telemetric { (telemetric, bedside) } else { (bedside, telemetric) };
    if ctx.view.channel(first).is_some() {
        first
    } else {
        second
    }
}

/// Symmetric relative difference between two independent estimates.
fn pair_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.max(b)
}

pub fn spo2_lf_suite(cfg: &LfConfig) -> Vec<LabelingFunction> {
    let c = cfg.clone();
    let band = c.hr_band;
    let lf1 = LabelingFunction::new(SPO2_LF_NAMES[0], move |ctx| {
        agreement_vote(ctx.derived.hr_ecg2, ctx.numeric_median(ChannelId::Hr), band)
    });
    let lf2 = LabelingFunction::new(SPO2_LF_NAMES[1], move |ctx| {
        agreement_vote(ctx.derived.hr_ecg3, pleth_hr(ctx), band)
    });
    let lf3 = LabelingFunction::new(SPO2_LF_NAMES[2], move |ctx| {
        agreement_vote(ctx.derived.pleth.hr_peaks, ctx.numeric_median(ChannelId::Hr), band)
    });
    let lf4 = LabelingFunction::new(SPO2_LF_NAMES[3], move |ctx| {
        agreement_vote(ctx.derived.pleth.hr_fft, ctx.numeric_median(ChannelId::Hr), band)
    });
    let lf5 = LabelingFunction::new(SPO2_LF_NAMES[4], move |ctx| {
        agreement_vote(ctx.derived.pleth_t.hr_peaks, ctx.numeric_median(ChannelId::Hr), band)
    });
    let floor = c.pulsatility_floor;
    let lf6 = LabelingFunction::new(SPO2_LF_NAMES[5], move |ctx| match ctx.derived.pleth.pulsatility {
        Some(p) if p < floor => Vote::Artifact,
        _ => Vote::Abstain,
    });
    let lf7 = LabelingFunction::new(SPO2_LF_NAMES[6], move |ctx| match ctx.derived.pleth_t.pulsatility {
        Some(p) if p < floor => Vote::Artifact,
        _ => Vote::Abstain,
    });
    let tachy = c.tachypnea_rr;
    let lf8 = LabelingFunction::new(SPO2_LF_NAMES[7], move |ctx| match ctx.numeric_median(ChannelId::Rr) {
        Some(rr) if rr > tachy => Vote::Real,
        _ => Vote::Abstain,
    });
    let ceiling = c.spo2_std_ceiling;
    let lf9 = LabelingFunction::new(SPO2_LF_NAMES[8], move |ctx| {
        let id = oximetry(ctx, ChannelId::Spo2, ChannelId::Spo2T);
        match ctx.numeric_std(id) {
            Some(s) if s > ceiling => Vote::Artifact,
            _ => Vote::Abstain,
        }
    });
    let min_density = c.pleth_missing_density;
    let lf10 = LabelingFunction::new(SPO2_LF_NAMES[9], move |ctx| {
        let id = oximetry(ctx, ChannelId::Pleth, ChannelId::PlethT);
        match ctx.density(id) {
            Some(d) if d < min_density => Vote::Artifact,
            _ => Vote::Abstain,
        }
    });
    let (agree, disagree) = (c.consensus_agree_band, c.consensus_disagree_band);
    let lf11 = LabelingFunction::new(SPO2_LF_NAMES[10], move |ctx| {
        let d = &ctx.derived;
        let sources: Vec<f64> = [d.hr_ecg2.or(d.hr_ecg3), d.pleth.hr_peaks, d.pleth_t.hr_peaks]
            .into_iter()
            .flatten()
            .filter(|v| *v > 0.0 && v.is_finite())
            .collect();
        if sources.len() < 2 {
            return Vote::Abstain;
        }
        let mut diffs = Vec::new();
        for i in 0..sources.len() {
            for j in i + 1..sources.len() {
                diffs.push(pair_diff(sources[i], sources[j]));
            }
        }
        if diffs.iter().any(|&x| x <= agree) {
            Vote::Real
        } else if diffs.iter().all(|&x| x > disagree) {
            Vote::Artifact
        } else {
            Vote::Abstain
        }
    });
    vec![lf1, lf2, lf3, lf4, lf5, lf6, lf7, lf8, lf9, lf10, lf11]
}
