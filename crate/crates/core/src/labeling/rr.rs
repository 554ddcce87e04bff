//! Respiratory-rate alert heuristics.

use crate::data::ChannelId;

use super::{agreement_vote, relative_diff, LabelingFunction, LfConfig, Vote};

pub const RR_LF_NAMES: [&str; 8] = [
    "resp_extrema_agreement",
    "resp_fft_agreement",
    "resp_peakcount_agreement",
    "pleth_derived_rr_agreement",
    "resp_low_amplitude",
    "resp_missing",
    "rr_numeric_unstable",
    "rr_numeric_density",
];

pub fn rr_lf_suite(cfg: &LfConfig) -> Vec<LabelingFunction> {
    let c = cfg.clone();
    let band = c.resp_extrema_band;
    let lf1 = LabelingFunction::new(RR_LF_NAMES[0], move |ctx| {
        agreement_vote(ctx.derived.resp_extrema_rate, ctx.numeric_median(ChannelId::Rr), band)
    });
    let band = c.resp_fft_band;
    let lf2 = LabelingFunction::new(RR_LF_NAMES[1], move |ctx| {
        agreement_vote(ctx.derived.resp_fft_rate, ctx.numeric_median(ChannelId::Rr), band)
    });
    let band = c.resp_peakcount_band;
    let lf3 = LabelingFunction::new(RR_LF_NAMES[2], move |ctx| {
        agreement_vote(ctx.derived.resp_peak_rate, ctx.numeric_median(ChannelId::Rr), band)
    });
    let (agree, disagree) = (c.pleth_rr_agree_band, c.pleth_rr_artifact_band);
    let lf4 = LabelingFunction::new(RR_LF_NAMES[3], move |ctx| {
        let (Some(est), Some(med)) = (ctx.derived.pleth_rr(), ctx.numeric_median(ChannelId::Rr)) else {
            return Vote::Abstain;
        };
        match relative_diff(est, med) {
            Some(d) if d <= agree => Vote::Real,
            Some(d) if d > disagree => Vote::Artifact,
            _ => Vote::Abstain,
        }
    });
    let floor = c.resp_height_floor;
    let lf5 = LabelingFunction::new(RR_LF_NAMES[4], move |ctx| match ctx.derived.resp_height {
        Some(h) if h < floor => Vote::Artifact,
        _ => Vote::Abstain,
    });
    let min_density = c.resp_missing_density;
    let lf6 = LabelingFunction::new(RR_LF_NAMES[5], move |ctx| match ctx.density(ChannelId::Resp) {
        Some(d) if d < min_density => Vote::Artifact,
        _ => Vote::Abstain,
    });
    let ceiling = c.rr_std_ceiling;
    let lf7 = LabelingFunction::new(RR_LF_NAMES[6], move |ctx| match ctx.numeric_std(ChannelId::Rr) {
        Some(s) if s > ceiling => Vote::Artifact,
        _ => Vote::Abstain,
    });
    let min_density = c.rr_numeric_density;
    let lf8 = LabelingFunction::new(RR_LF_NAMES[7], move |ctx| match ctx.density(ChannelId::Rr) {
        Some(d) if d < min_density => Vote::Artifact,
        _ => Vote::Abstain,
    });
    vec![lf1, lf2, lf3, lf4, lf5, lf6, lf7, lf8]
}
