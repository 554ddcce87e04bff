//! Report bundle: metric table, ROC and score CSVs, importance rankings,
//! log-scale ROC plots and the JSON the plots can be regenerated from.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ArmReport, EvalError, EvaluationReport};
use crate::features::Ablation;

pub const REPORT_FILE: &str = "report.json";

pub const METRICS_HEADER: [&str; 8] = [
    "arm",
    "ablation",
    "Accuracy",
    "AUC",
    "FPR 50% TPR",
    "FNR 50% TNR",
    "TPR 1% FPR",
    "TNR 1% FNR",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

fn write_file(path: PathBuf, body: &str, written: &mut Vec<PathBuf>) -> Result<(), EvalError> {
    fs::write(&path, body).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

fn csv_line(fields: &[String]) -> String {
    let mut line = fields
        .iter()
        .map(|f| if f.contains([',', '"', '\n']) { format!("\"{}\"", f.replace('"', "\"\"")) } else { f.clone() })
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn threshold(t: Option<f64>) -> String {
    t.map(num).unwrap_or_default()
}

fn metrics_csv(report: &EvaluationReport) -> String {
    let mut out = csv_line(&METRICS_HEADER.map(String::from));
    for a in &report.arms {
        let m = &a.metrics;
        out += &csv_line(&[
            a.arm.labeler.as_str().to_string(),
            a.arm.ablation.slug().to_string(),
            num(m.accuracy),
            num(m.auc),
            num(m.operating.fpr_at_50tpr),
            num(m.operating.fnr_at_50tnr),
            num(m.operating.tpr_at_1fpr),
            num(m.operating.tnr_at_1fnr),
        ]);
    }
    out
}

fn roc_csvs(a: &ArmReport) -> (String, String) {
    let mut tpr = csv_line(&["threshold", "fpr", "tpr", "tpr_lo", "tpr_hi"].map(String::from));
    let mut tnr = csv_line(&["threshold", "fnr", "tnr", "tnr_lo", "tnr_hi"].map(String::from));
    for r in &a.roc {
        tpr += &csv_line(&[threshold(r.threshold), num(r.fpr), num(r.tpr), num(r.tpr_lo), num(r.tpr_hi)]);
        tnr += &csv_line(&[threshold(r.threshold), num(r.fnr), num(r.tnr), num(r.tnr_lo), num(r.tnr_hi)]);
    }
    (tpr, tnr)
}

fn scores_csv(a: &ArmReport) -> String {
    let mut out = csv_line(&["row_id", "patient_id", "y", "score"].map(String::from));
    for s in &a.scores {
        out += &csv_line(&[s.row_id.clone(), s.patient_id.clone(), s.y.as_u8().to_string(), num(s.score)]);
    }
    out
}

fn folds_csv(a: &ArmReport) -> String {
    let mut out = csv_line(&["patient_id", "n_test", "n_train_labeled", "accuracy", "auc"].map(String::from));
    for f in &a.folds {
        out += &csv_line(&[
            f.patient_id.clone(),
            f.n_test.to_string(),
            f.n_train_labeled.to_string(),
            num(f.accuracy),
            f.auc.map(num).unwrap_or_default(),
        ]);
    }
    out
}

fn ranking_csv(r: &[(String, f64)]) -> String {
    let mut out = csv_line(&["rank", "feature", "score"].map(String::from));
    for (k, (name, s)) in r.iter().enumerate() {
        out += &csv_line(&[(k + 1).to_string(), name.clone(), num(*s)]);
    }
    out
}

/// Writes the whole bundle for one or more alert types. Returns the paths in
/// the order written.
pub fn emit_report(reports: &[EvaluationReport], out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for r in reports {
        let tau = r.tau.slug();
        write_file(out_dir.join(format!("{tau}_metrics.csv")), &metrics_csv(r), &mut written)?;
        for a in &r.arms {
            let stem = a.arm.file_stem(r.tau);
            let (tpr, tnr) = roc_csvs(a);
            write_file(out_dir.join(format!("{stem}_roc_tpr.csv")), &tpr, &mut written)?;
            write_file(out_dir.join(format!("{stem}_roc_tnr.csv")), &tnr, &mut written)?;
            write_file(out_dir.join(format!("{stem}_scores.csv")), &scores_csv(a), &mut written)?;
            write_file(out_dir.join(format!("{stem}_folds.csv")), &folds_csv(a), &mut written)?;
            if let Some(imp) = &a.importance {
                write_file(out_dir.join(format!("{stem}_importance_gi.csv")), &ranking_csv(&imp.gi), &mut written)?;
                write_file(out_dir.join(format!("{stem}_importance_pfi.csv")), &ranking_csv(&imp.pfi), &mut written)?;
            }
        }
    }
    let json = serde_json::to_string_pretty(reports)? + "\n";
    write_file(out_dir.join(REPORT_FILE), &json, &mut written)?;
    written.extend(render_plots(reports, out_dir)?);
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<Vec<EvaluationReport>, EvalError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Which side of the curve a plot shows.
#[derive(Clone, Copy)]
enum Orientation {
    /// TPR against log FPR.
    Tpr,
    /// TNR against log FNR.
    Tnr,
}

struct Curve<'a> {
    label: String,
    color: &'a str,
    /// (x rate, y rate, y lo, y hi)
    points: Vec<(f64, f64, f64, f64)>,
}

fn plot_svg(title: &str, xlabel: &str, ylabel: &str, floor: f64, curves: &[Curve<'_>]) -> String {
    let lo = floor.log10();
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x.max(floor).log10() - lo) / -lo * pw;
    let sy = |y: f64| TOP + (1.0 - y) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, LEFT + pw / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let mut decade = lo.floor() as i32;
    while decade <= 0 {
        let x = 10f64.powi(decade);
        if x >= floor {
            let px = sx(x);
            let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + ph);
            let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">1e{decade}</text>"#, TOP + ph + 16.0);
        }
        decade += 1;
    }
    for k in 0..=5 {
        let y = k as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#, LEFT - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel} (log scale)</text>"#, LEFT + pw / 2.0, H - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, c) in curves.iter().enumerate() {
        let mut band = String::new();
        for p in &c.points {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.3));
        }
        for p in c.points.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.0), sy(p.2));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.15" stroke="none"/>"#, band.trim_end(), c.color);
        let line: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, line.join(" "), c.color);
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#, lx + 18.0, c.color);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, c.label);
    }
    s.push_str("</svg>\n");
    s
}

/// Log-scale ROC plots with Wilson bands, one per alert type, ablation and
/// orientation. Rates of zero are drawn at 1/(class count).
pub fn render_plots(reports: &[EvaluationReport], out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for r in reports {
        for ablation in Ablation::ALL {
            let arms: Vec<&ArmReport> = r.arms.iter().filter(|a| a.arm.ablation == ablation).collect();
            if arms.is_empty() {
                continue;
            }
            for orient in [Orientation::Tpr, Orientation::Tnr] {
                let curves: Vec<Curve<'_>> = arms
                    .iter()
                    .map(|a| Curve {
                        label: a.arm.labeler.as_str().to_string(),
                        color: COLORS[a.arm.labeler as usize % COLORS.len()],
                        points: match orient {
                            Orientation::Tpr => a.roc.iter().map(|p| (p.fpr, p.tpr, p.tpr_lo, p.tpr_hi)).collect(),
                            Orientation::Tnr => a.roc.iter().rev().map(|p| (p.fnr, p.tnr, p.tnr_lo, p.tnr_hi)).collect(),
                        },
                    })
                    .collect();
                let (n, side, xl, yl) = match orient {
                    Orientation::Tpr => (arms[0].n_neg, "tpr", "False positive rate", "True positive rate"),
                    Orientation::Tnr => (arms[0].n_pos, "tnr", "False negative rate", "True negative rate"),
                };
                let title = format!("{} alerts, {}", r.tau.as_str(), ablation.slug().replace('_', " "));
                let svg = plot_svg(&title, xl, yl, 1.0 / n as f64, &curves);
                let path = out_dir.join(format!("{}_{}_roc_{side}.svg", r.tau.slug(), ablation.slug()));
                write_file(path, &svg, &mut written)?;
            }
        }
    }
    Ok(written)
}
