//! Hand-written SVG figures. Every SVG is emitted with the CSV it was drawn
//! from, and both are pure functions of the input reports.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use shoebox_inverse::metrics::EvalReport;
use shoebox_inverse::rir::MultichannelRir;

use crate::study::{max_abs_diff, Study};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    s
}

/// Axes frame, y ticks and axis labels for a plot area mapping `[y0, y1]`.
fn frame(s: &mut String, y0: f64, y1: f64, xlabel: &str, ylabel: &str) {
    let (x_min, x_max, y_top, y_bot) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{x_min},{y_top} V{y_bot} H{x_max}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let y = y_bot - (y_bot - y_top) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{x_min}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x_min - 4.0,
            x_min - 6.0,
            y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x_min + x_max) / 2.0,
        H - 12.0,
        esc(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y_top + y_bot) / 2.0,
        esc(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Upper y limit: the data maximum with 10% headroom, or 1 for flat data.
fn y_limit(max: f64) -> f64 {
    if max > 0.0 && max.is_finite() {
        1.1 * max
    } else {
        1.0
    }
}

/// One bar per label.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], ylabel: &str) -> String {
    let mut s = header(title);
    let y1 = y_limit(values.iter().copied().fold(0.0, f64::max));
    frame(&mut s, 0.0, y1, "", ylabel);
    let n = values.len().max(1) as f64;
    let slot = (W - LEFT - RIGHT) / n;
    let plot_h = H - TOP - BOTTOM;
    for (k, (label, v)) in labels.iter().zip(values).enumerate() {
        let h = plot_h * (v.max(0.0) / y1);
        let x = LEFT + slot * (k as f64 + 0.2);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            H - BOTTOM - h,
            slot * 0.6,
            COLORS[0]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.3,
            H - BOTTOM + 16.0,
            esc(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + slot * 0.3,
            H - BOTTOM - h - 4.0,
            tick(*v)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// A polyline per series, with a legend and an optional note line.
pub fn line_chart(
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
    xlabel: &str,
    ylabel: &str,
    note: Option<&str>,
) -> String {
    let mut s = header(title);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        ylo = ylo.min(*y);
        yhi = yhi.max(*y);
    }
    if !(x1 > x0) {
        x0 = 0.0;
        x1 = 1.0;
    }
    let (y0, y1) = if ylo < 0.0 {
        let m = y_limit(yhi.max(-ylo));
        (-m, m)
    } else {
        (0.0, y_limit(yhi))
    };
    frame(&mut s, y0, y1, xlabel, ylabel);
    for k in 0..=4 {
        let v = x0 + (x1 - x0) * k as f64 / 4.0;
        let x = LEFT + (W - LEFT - RIGHT) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 16.0,
            tick(v)
        );
    }
    let sx = |x: f64| LEFT + (W - LEFT - RIGHT) * (x - x0) / (x1 - x0);
    let sy = |y: f64| H - BOTTOM - (H - TOP - BOTTOM) * (y - y0) / (y1 - y0);
    for (k, (name, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        for (j, (x, y)) in points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, sx(*x), sy(*y));
        }
        let dash = if k % 2 == 1 { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            d.trim_end()
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT - 170.0,
            W - RIGHT - 150.0,
            W - RIGHT - 145.0,
            ly + 4.0,
            esc(name)
        );
    }
    if let Some(note) = note {
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, LEFT + 8.0, TOP + 14.0, esc(note));
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Label of a study in multi-study charts.
fn study_label(study: &Study) -> String {
    let radius_cm = study
        .cfg
        .array
        .build()
        .map(|a| 100.0 * a.radius())
        .unwrap_or(f64::NAN);
    let mut label = format!("{} kHz, R={radius_cm:.1} cm", study.cfg.fs / 1000.0);
    if let Some(p) = study.cfg.psnr_db {
        let _ = write!(label, ", {p} dB");
    }
    label
}

fn load_report(study: &Study) -> anyhow::Result<EvalReport> {
    let path = study.dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}: run evaluate first", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes every figure for `studies` into `out`. Returns the files written.
pub fn plot(studies: &[Study], out: &Path) -> anyhow::Result<Vec<String>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> anyhow::Result<()> {
        write(&out.join(name), &contents)?;
        written.push(name.to_string());
        Ok(())
    };

    let reports: Vec<EvalReport> = studies.iter().map(load_report).collect::<anyhow::Result<_>>()?;
    let labels: Vec<String> = studies.iter().map(study_label).collect();

    // Error bars, one bar per study (sampling rate, array radius, noise).
    let mean = |s: &Option<shoebox_inverse::metrics::Summary>| s.as_ref().map_or(f64::NAN, |s| s.mean);
    let metrics: [(&str, &str, Box<dyn Fn(&EvalReport) -> f64>); 4] = [
        ("dim_error", "mean dimension error (m)", Box::new(|r| mean(&r.aggregates.dim_error_m))),
        ("axis_error", "mean axis error (deg)", Box::new(|r| mean(&r.aggregates.axis_error_deg))),
        (
            "absorption_mae",
            "absorption MAE over recalled walls",
            Box::new(|r| r.aggregates.absorption_mae_over_recalled.unwrap_or(f64::NAN)),
        ),
        ("ser", "mean SER (dB)", Box::new(|r| mean(&r.aggregates.ser_db))),
    ];
    for (name, ylabel, f) in &metrics {
        let values: Vec<f64> = reports.iter().map(|r| f(r)).collect();
        let mut csv = format!("study,{name}\n");
        for (l, v) in labels.iter().zip(&values) {
            let _ = writeln!(csv, "\"{l}\",{v}");
        }
        emit(&format!("{name}_bars.csv"), csv)?;
        let shown: Vec<f64> = values.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        emit(&format!("{name}_bars.svg"), bar_chart(ylabel, &labels, &shown, ylabel))?;
    }

    // Dimension recall against the error threshold.
    let mut csv = String::from("study,threshold_m,dim_recall\n");
    let mut series = Vec::new();
    for (l, r) in labels.iter().zip(&reports) {
        let a = &r.aggregates;
        let pts: Vec<(f64, f64)> = a.dim_recall_thresholds_m.iter().copied().zip(a.dim_recall.iter().copied()).collect();
        for (t, v) in &pts {
            let _ = writeln!(csv, "\"{l}\",{t},{v}");
        }
        series.push((l.clone(), pts));
    }
    emit("dim_recall.csv", csv)?;
    emit(
        "dim_recall.svg",
        line_chart("dimension recall", &series, "threshold (m)", "fraction of dimensions", None),
    )?;

    // RIR overlays of the first extrapolated room of each study.
    for (k, study) in studies.iter().enumerate() {
        let Some(room) = (0..study.cfg.n_rooms).find(|i| study.room_dir(*i).join("rir_new_truth.f64").exists())
        else {
            continue;
        };
        let dir = study.room_dir(room);
        let (truth, _) = MultichannelRir::load(&dir.join("rir_new_truth.f64"))?;
        for kind in ["estimate", "oracle"] {
            let (other, _) = MultichannelRir::load(&dir.join(format!("rir_new_{kind}.f64")))?;
            let diff = max_abs_diff(&truth, &other);
            let t = |n: usize| 1000.0 * n as f64 / truth.fs();
            let mut csv = format!("time_ms,truth,{kind}\n");
            for (n, (a, b)) in truth.channel(0).iter().zip(other.channel(0)).enumerate() {
                let _ = writeln!(csv, "{},{a},{b}", t(n));
            }
            let series = vec![
                ("ground truth".to_string(), truth.channel(0).iter().enumerate().map(|(n, v)| (t(n), *v)).collect()),
                (kind.to_string(), other.channel(0).iter().enumerate().map(|(n, v)| (t(n), *v)).collect()),
            ];
            let note = format!("max |difference| over all channels: {diff:.3e}");
            let title = format!("{} room {room:03}, microphone 0", labels[k]);
            emit(&format!("overlay_{k}_{kind}.csv"), csv)?;
            emit(
                &format!("overlay_{k}_{kind}.svg"),
                line_chart(&title, &series, "time (ms)", "amplitude", Some(&note)),
            )?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bar_chart() {
        let svg = bar_chart("t", &["one".into()], &[0.5], "y");
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn flat_and_empty_inputs_render() {
        let svg = bar_chart("t", &["a".into()], &[0.0], "y");
        assert!(!svg.contains("NaN"));
        let svg = line_chart("t", &[], "x", "y", None);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = bar_chart("a<b", &["x&y".into()], &[1.0], "y");
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
