//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line to stderr (outside the test harness capture) before asserting.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vitalws::alerts::{detect_alert_events, AlertCriteria, AlertType};
use vitalws::config::ExperimentConfig;
use vitalws::data::{slice_window, AlertClass, Channel, ChannelId, PatientRecord};
use vitalws::dsp::filter::butterworth_gain_sq;
use vitalws::dsp::{butterworth, derive_estimates, Band, DerivedEstimates, DspConfig};
use vitalws::evaluation::{
    operating_point_metrics, read_report, roc_and_auc, wilson_interval, EvaluationReport, Labeler, REPORT_FILE,
};
use vitalws::features::{fit_missingness_policy, Ablation, DenseMatrix};
use vitalws::forest::{feature_importance, train_random_forest, ForestHyper, ImportanceMode};
use vitalws::label_model::{marginal_nll, posterior, LabelModelParams};
use vitalws::labeling::Vote;
use vitalws::pipeline::{evaluate_to_dir, tables_from_synth, WindowSettings};
use vitalws::synth::CohortSpec;

mod common;
use common::{
    brute_operating_points, brute_row_prob, instance, mann_whitney, random_matrix, random_params, wilson_direct,
    VOTES,
};

fn verdict(n: u32, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {n}: {detail}");
}

/// Every vote configuration of `m` functions.
fn all_rows(m: usize) -> Vec<Vec<Vote>> {
    (0..3usize.pow(m as u32))
        .map(|code| (0..m).map(|j| VOTES[code / 3usize.pow(j as u32) % 3]).collect())
        .collect()
}

#[test]
fn c1_label_model_matches_enumeration() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        for m in 1..=4 {
            let p = random_params(&mut rng, m);
            for row in all_rows(m) {
                let pr = brute_row_prob(&p, &row);
                let post = posterior(&p, "r", &row).p_artifact;
                worst = worst.max((post - pr[1] / (pr[0] + pr[1])).abs());
            }
            for n in 1..=6 {
                let mat = random_matrix(&mut rng, n, m);
                let (nll, _) = marginal_nll(&p, &mat).unwrap();
                let want: f64 = (0..n)
                    .map(|i| {
                        let pr = brute_row_prob(&p, mat.row(i));
                        -(pr[0] + pr[1]).ln()
                    })
                    .sum();
                worst = worst.max((nll - want).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(1, worst < 1e-9 && secs < 10.0, &format!("max abs error {worst:.2e}, {secs:.2} s"));
}

#[test]
fn c2_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=4);
        let n = rng.random_range(1..=6);
        let p = random_params(&mut rng, m);
        let mat = random_matrix(&mut rng, n, m);
        let (_, g) = marginal_nll(&p, &mat).unwrap();
        for k in 0..2 * m {
            let shifted = |d: f64| {
                let mut q = p.clone();
                if k < m {
                    q.theta_acc[k] += d;
                } else {
                    q.theta_prop[k - m] += d;
                }
                marginal_nll(&q, &mat).unwrap().0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max((g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-3));
        }
    }
    verdict(2, worst < 1e-5, &format!("max relative error {worst:.2e}"));
}

#[test]
fn c3_propensity_does_not_move_posteriors() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=4);
        let p = random_params(&mut rng, m);
        let q = LabelModelParams {
            theta_prop: (0..m).map(|_| rng.random_range(-100.0..100.0)).collect(),
            ..p.clone()
        };
        for row in all_rows(m) {
            let d = (posterior(&p, "r", &row).p_artifact - posterior(&q, "r", &row).p_artifact).abs();
            worst = worst.max(d);
        }
    }
    verdict(3, worst <= 1e-12, &format!("max posterior change {worst:.2e}"));
}

fn window_estimates(channels: Vec<Channel>) -> DerivedEstimates {
    let mut rec = PatientRecord::new("tone").unwrap();
    for c in channels {
        rec.insert(c).unwrap();
    }
    derive_estimates(&slice_window(&rec, 30.0, 60.0), &DspConfig::default())
}

fn sampled(id: ChannelId, fs: f64, f: impl Fn(f64) -> f64) -> Channel {
    let v = (0..(120.0 * fs) as usize).map(|i| f(i as f64 / fs)).collect();
    Channel::contiguous(id, fs, 0, v).unwrap()
}

/// Narrow R spike plus a T wave, `hr` beats per minute.
fn ecg_wave(hr: f64) -> impl Fn(f64) -> f64 {
    let period = 60.0 / hr;
    move |t| {
        let ph = (t - 0.3).rem_euclid(period);
        let r = (-(ph.min(period - ph) / 0.012).powi(2)).exp();
        r + 0.25 * (-((ph - 0.3 * period) / 0.05).powi(2)).exp()
    }
}

/// Gaussian pulses at `hr`, amplitude-modulated at `rr` breaths per minute.
fn pleth_wave(hr: f64, rr: f64) -> impl Fn(f64) -> f64 {
    move |t| {
        let ph = (hr / 60.0 * t).fract();
        (1.0 + 0.3 * (2.0 * PI * rr / 60.0 * t).sin()) * (-((ph - 0.25) / 0.08).powi(2)).exp()
    }
}

#[test]
fn c4_dsp_recovers_planted_rates() {
    let mut failures = Vec::new();
    let mut check = |what: String, got: Option<f64>, want: f64, tol: f64| {
        if !got.is_some_and(|g| (g - want).abs() <= tol) {
            failures.push(format!("{what}: {got:?} vs {want}"));
        }
    };
    for f in [0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.75] {
        let e = window_estimates(vec![sampled(ChannelId::Resp, 62.5, |t| (2.0 * PI * f * t).sin())]);
        check(format!("respFFT {f} Hz"), e.resp_fft_rate, 60.0 * f, 1.0);
        check(format!("respNK1 {f} Hz"), e.resp_peak_rate, 60.0 * f, 1.0);
    }
    for fs in [250.0, 500.0] {
        for hr in [45.0, 60.0, 75.0, 90.0, 120.0, 150.0] {
            let e = window_estimates(vec![sampled(ChannelId::EcgII, fs, ecg_wave(hr))]);
            check(format!("ECG {hr} bpm @{fs}"), e.hr_ecg2, hr, 2.0);
        }
    }
    for (hr, rr) in [(50.0, 12.0), (72.0, 15.0), (90.0, 18.0), (110.0, 24.0), (140.0, 30.0)] {
        let e = window_estimates(vec![sampled(ChannelId::Pleth, 125.0, pleth_wave(hr, rr))]);
        check(format!("pleth HR intervals {hr}"), e.pleth.hr_intervals, hr, 2.0);
        check(format!("pleth HR FFT {hr}"), e.pleth.hr_fft, hr, 2.0);
        check(format!("pleth envelope RR {rr}"), e.pleth_rr(), rr, 2.0);
    }

    // Resp low-pass: one pass over a 10 Hz tone, steady-state RMS ratio.
    let (fs, cutoff, order) = (62.5, 2.0, 5);
    let sos = butterworth(order, cutoff, fs, Band::Lowpass).unwrap();
    let x: Vec<f64> = (0..20_000).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
    let y = sos.filter(&x);
    let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
    let measured_db = -20.0 * (rms(&y[10_000..]) / rms(&x[10_000..])).log10();
    let analytic_db = -10.0 * butterworth_gain_sq(order, cutoff, fs, Band::Lowpass, 10.0).log10();
    if !(measured_db >= 60.0 && (measured_db - analytic_db).abs() < 0.1) {
        failures.push(format!("stopband {measured_db:.2} dB vs analytic {analytic_db:.2} dB"));
    }
    verdict(
        4,
        failures.is_empty(),
        &format!("stopband at 10 Hz {measured_db:.1} dB; misses: {failures:?}"),
    );
}

enum Seg {
    /// Samples beyond threshold, at this value.
    B(usize, f64),
    /// In-range samples.
    N(usize),
    /// No samples.
    M(usize),
}

fn fixture_channel(id: ChannelId, normal: f64, segs: &[Seg]) -> Channel {
    let (mut idx, mut val, mut t) = (Vec::new(), Vec::new(), 0u64);
    for s in segs {
        let (n, v) = match *s {
            Seg::B(n, v) => (n, Some(v)),
            Seg::N(n) => (n, Some(normal)),
            Seg::M(n) => (n, None),
        };
        for _ in 0..n {
            if let Some(v) = v {
                idx.push(t);
                val.push(v);
            }
            t += 1;
        }
    }
    Channel::new(id, 1.0, idx, val).unwrap()
}

struct Fixture {
    name: &'static str,
    tau: AlertType,
    channels: Vec<(ChannelId, Vec<Seg>)>,
    /// (start, duration, telemetric)
    want: Vec<(f64, f64, bool)>,
}

fn rr(name: &'static str, body: Vec<Seg>, want: &[(f64, f64)]) -> Fixture {
    let mut segs = vec![Seg::N(100)];
    segs.extend(body);
    segs.push(Seg::N(100));
    Fixture {
        name,
        tau: AlertType::Rr,
        channels: vec![(ChannelId::Rr, segs)],
        want: want.iter().map(|&(t, d)| (t, d, false)).collect(),
    }
}

fn spo2(name: &'static str, channels: Vec<(ChannelId, Vec<Seg>)>, want: &[(f64, f64, bool)]) -> Fixture {
    Fixture { name, tau: AlertType::Spo2, channels, want: want.to_vec() }
}

fn fixtures() -> Vec<Fixture> {
    use Seg::*;
    let hi = 35.0;
    vec![
        rr("persistence 0.70", vec![B(140, hi), N(120), B(140, hi)], &[(100.0, 400.0)]),
        rr("persistence 0.69", vec![B(138, hi), N(124), B(138, hi)], &[]),
        rr("gap 299 s in range", vec![B(700, hi), N(299), B(700, hi)], &[(100.0, 1699.0)]),
        rr("gap 301 s in range", vec![B(700, hi), N(301), B(700, hi)], &[(100.0, 700.0), (1101.0, 700.0)]),
        rr("gap 299 s missing", vec![B(700, hi), M(299), B(700, hi)], &[(100.0, 1699.0)]),
        rr("gap 301 s missing", vec![B(700, hi), M(301), B(700, hi)], &[(100.0, 700.0), (1101.0, 700.0)]),
        rr("density 0.65", vec![B(130, hi), M(140), B(130, hi)], &[(100.0, 400.0)]),
        rr("density 0.64", vec![B(128, hi), M(144), B(128, hi)], &[]),
        rr("duration 300 s", vec![B(300, hi)], &[(100.0, 300.0)]),
        rr("duration 299 s", vec![B(299, hi)], &[]),
        rr("rr exactly 10", vec![B(400, 10.0)], &[]),
        rr("rr exactly 29", vec![B(400, 29.0)], &[]),
        rr("rr 9.9", vec![B(400, 9.9)], &[(100.0, 400.0)]),
        rr("rr 29.1", vec![B(400, 29.1)], &[(100.0, 400.0)]),
        rr("high then low", vec![B(200, hi), B(200, 6.0)], &[(100.0, 400.0)]),
        spo2("spo2 exactly 90", vec![(ChannelId::Spo2, vec![N(100), B(400, 90.0), N(100)])], &[]),
        spo2(
            "spo2 89.9",
            vec![(ChannelId::Spo2, vec![N(100), B(400, 89.9), N(100)])],
            &[(100.0, 400.0, false)],
        ),
        spo2(
            "telemetric only",
            vec![(ChannelId::Spo2T, vec![N(100), B(400, 85.0), N(100)])],
            &[(100.0, 400.0, true)],
        ),
        spo2(
            "cross-channel gap 299 s",
            vec![
                (ChannelId::Spo2, vec![N(100), B(400, 85.0), N(1000)]),
                (ChannelId::Spo2T, vec![N(799), B(400, 85.0), N(100)]),
            ],
            &[(100.0, 1099.0, true)],
        ),
        spo2(
            "cross-channel gap 301 s",
            vec![
                (ChannelId::Spo2, vec![N(100), B(400, 85.0), N(1000)]),
                (ChannelId::Spo2T, vec![N(801), B(400, 85.0), N(100)]),
            ],
            &[(100.0, 400.0, false), (801.0, 400.0, true)],
        ),
    ]
}

#[test]
fn c5_alert_detection_fixtures() {
    let all = fixtures();
    let mut wrong = Vec::new();
    for f in &all {
        let mut rec = PatientRecord::new("fx").unwrap();
        let normal = if f.tau == AlertType::Rr { 15.0 } else { 97.0 };
        for (id, segs) in &f.channels {
            rec.insert(fixture_channel(*id, normal, segs)).unwrap();
        }
        let got: Vec<(f64, f64, bool)> = detect_alert_events(&rec, f.tau, &AlertCriteria::default())
            .unwrap()
            .iter()
            .map(|e| (e.t, e.d, e.telemetric))
            .collect();
        if got != f.want {
            wrong.push(format!("{}: got {got:?}", f.name));
        }
    }
    verdict(5, all.len() == 20 && wrong.is_empty(), &format!("{} fixtures; mismatches: {wrong:?}", all.len()));
}

#[test]
fn c6_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut bad = 0;
    for _ in 0..50 {
        let (s, y) = instance(&mut rng);
        let roc = roc_and_auc(&s, &y).unwrap();
        if roc.auc != mann_whitney(&s, &y) || operating_point_metrics(&roc) != brute_operating_points(&s, &y) {
            bad += 1;
        }
    }
    let (lo, hi) = wilson_interval(50, 100, 1.96).unwrap();
    let example = ((lo * 1e4).round() / 1e4, (hi * 1e4).round() / 1e4) == (0.4038, 0.5962);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=5000u64);
        let k = rng.random_range(1..n);
        let (lo, hi) = wilson_interval(k, n, 1.96).unwrap();
        let (dlo, dhi) = wilson_direct(k, n, 1.96);
        worst = worst.max((lo - dlo).abs()).max((hi - dhi).abs());
    }
    verdict(
        6,
        bad == 0 && example && worst < 1e-10,
        &format!("{bad}/50 metric mismatches; (50,100) -> [{lo:.4}, {hi:.4}]; Wilson max error {worst:.1e}"),
    );
}

fn full_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        synth: Some(CohortSpec { seed: 7, ..Default::default() }),
        seed: Some(7),
        out_dir: out.to_path_buf(),
        ..Default::default()
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

struct FullRun {
    reports: Vec<EvaluationReport>,
    bundle: BTreeMap<String, Vec<u8>>,
    elapsed: Duration,
    dir: tempfile::TempDir,
}

/// Full default experiment on the 40-patient cohort, run once per test binary.
fn full_run() -> &'static FullRun {
    static RUN: OnceLock<FullRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bundle");
        let t0 = Instant::now();
        evaluate_to_dir(&full_config(&out)).unwrap();
        let elapsed = t0.elapsed();
        let reports = read_report(&out.join(REPORT_FILE)).unwrap();
        FullRun { reports, bundle: snapshot(&out), elapsed, dir }
    })
}

fn auc(r: &EvaluationReport, labeler: Labeler, ablation: Ablation) -> f64 {
    r.arm(labeler, ablation).unwrap().metrics.auc
}

#[test]
fn c7_weak_supervision_rivals_full_supervision() {
    let run = full_run();
    let mut ok = run.elapsed < Duration::from_secs(600);
    let mut parts = Vec::new();
    for r in &run.reports {
        let ws = auc(r, Labeler::WeakSup, Ablation::WithWaveform);
        let fs = auc(r, Labeler::FullySup, Ablation::WithWaveform);
        let mv = auc(r, Labeler::MajorityVote, Ablation::WithWaveform);
        ok &= ws >= 0.85 && (ws - fs).abs() <= 0.05 && (mv - ws).abs() <= 0.08;
        parts.push(format!(
            "{}: {} windows, {} artifact, WS {ws:.3} FS {fs:.3} MV {mv:.3}",
            r.tau, r.n_windows, r.n_artifact
        ));
    }
    ok &= run.reports.len() == 2 && run.reports.iter().all(|r| r.n_patients == 40);
    verdict(7, ok, &format!("{}; {:.0} s", parts.join("; "), run.elapsed.as_secs_f64()));
}

#[test]
fn c8_waveforms_matter_more_for_spo2() {
    let run = full_run();
    let drop = |tau: AlertType, l: Labeler| {
        let r = run.reports.iter().find(|r| r.tau == tau).unwrap();
        auc(r, l, Ablation::WithWaveform) - auc(r, l, Ablation::WithoutWaveform)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for l in [Labeler::WeakSup, Labeler::FullySup, Labeler::MajorityVote] {
        let (s, r) = (drop(AlertType::Spo2, l), drop(AlertType::Rr, l));
        ok &= s > r;
        parts.push(format!("{}: SpO2 drop {s:.3} vs RR {r:.3}", l.as_str()));
    }
    verdict(8, ok, &parts.join("; "));
}

#[test]
fn c9_planted_feature_ranks_first() {
    let spec = CohortSpec { seed: 7, ..Default::default() };
    let table = tables_from_synth(&spec, &[AlertType::Spo2], &WindowSettings::default()).unwrap().remove(0);
    let y: Vec<AlertClass> = table.windows.iter().map(|w| w.y.unwrap()).collect();
    let policy = fit_missingness_policy(&table.features).unwrap();
    let cohort = policy.apply(&table.features).unwrap();

    // Cohort columns, each shuffled on its own so only the planted one carries the label.
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut x = cohort.x.clone();
    for f in 0..cohort.n_features() {
        let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
        col.shuffle(&mut rng);
        for (r, v) in x.iter_mut().zip(col) {
            r[f] = v;
        }
    }
    let noise = Normal::new(0.0, 0.5).unwrap();
    for (r, c) in x.iter_mut().zip(&y) {
        r.push(c.as_u8() as f64 + noise.sample(&mut rng));
    }
    let mut names = cohort.names.clone();
    names.push("planted".into());
    let data = DenseMatrix { names, row_ids: cohort.row_ids.clone(), x };

    let forest = train_random_forest(&data, &y, &ForestHyper::default(), 9).unwrap();
    let gi = feature_importance(&forest, &data, &y, ImportanceMode::Gi, 1, 9).unwrap();
    let pfi = feature_importance(&forest, &data, &y, ImportanceMode::Pfi, 5, 9).unwrap();
    let sum: f64 = forest.gini_importance.iter().sum();
    let ok = gi[0].0 == "planted" && pfi[0].0 == "planted" && (sum - 1.0).abs() <= 1e-9;
    verdict(
        9,
        ok,
        &format!(
            "{} features; GI top {} {:.3}, PFI top {} {:.3}; GI sum - 1 = {:.1e}",
            data.n_features(),
            gi[0].0,
            gi[0].1,
            pfi[0].0,
            pfi[0].1,
            sum - 1.0
        ),
    );
}

#[test]
fn c10_evaluate_is_byte_identical() {
    let first = full_run();
    let out = first.dir.path().join("bundle");
    fs::remove_dir_all(&out).unwrap();
    evaluate_to_dir(&full_config(&out)).unwrap();
    let second = snapshot(&out);
    let differing: Vec<&String> = first
        .bundle
        .keys()
        .chain(second.keys())
        .filter(|k| first.bundle.get(*k) != second.get(*k))
        .collect();
    verdict(
        10,
        differing.is_empty() && !second.is_empty(),
        &format!("{} files compared; differing: {differing:?}", second.len()),
    );
}
