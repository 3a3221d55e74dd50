//! CSV tables and minimal SVG line charts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back from a CSV is bit-identical to the one computed.

use std::fmt::Write;

use unetpp_core::metrics::SegMetrics;
use unetpp_core::train::{mean_std, EpochRecord, ImageMetrics, TrainHistory};

/// A CSV table built row by row. Cells must not contain commas or newlines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Csv {
        let mut c = Csv {
            text: String::new(),
            columns: header.len(),
        };
        c.push(header);
        c
    }

    pub fn push<S: AsRef<str>>(&mut self, cells: &[S]) {
        assert_eq!(cells.len(), self.columns, "row width");
        let line: Vec<&str> = cells.iter().map(AsRef::as_ref).collect();
        assert!(line.iter().all(|c| !c.contains([',', '\n'])), "CSV cell with a separator: {line:?}");
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// Parses a CSV written by [`Csv`] into header and rows.
pub fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let split = |l: &str| l.split(',').map(str::to_string).collect::<Vec<_>>();
    let header = lines.next().map(split).unwrap_or_default();
    (header, lines.map(split).collect())
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn history_csv(h: &TrainHistory) -> Csv {
    let mut header = vec!["epoch".to_string(), "train_loss".into(), "val_loss".into()];
    header.extend(h.heads.iter().map(|n| head_column(n)));
    header.push("val_iou".into());
    let mut csv = Csv::new(&header);
    for e in &h.epochs {
        csv.push(&history_row(e));
    }
    csv
}

/// `head@X^{0,j}` becomes `val_loss_X0_j`, keeping CSV headers comma-free.
fn head_column(head: &str) -> String {
    let digits: Vec<&str> = head.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty()).collect();
    format!("val_loss_X{}", digits.join("_"))
}

fn history_row(e: &EpochRecord) -> Vec<String> {
    let mut row = vec![e.epoch.to_string(), num(e.train_loss), num(e.val_loss)];
    row.extend(e.head_val_losses.iter().map(|&v| num(v)));
    row.push(num(e.val_iou));
    row
}

/// Mean and sample s.d. per column over trials, for the epochs every trial reached.
pub fn history_mean_csv(trials: &[TrainHistory]) -> Csv {
    let heads = trials.first().map(|h| h.heads.clone()).unwrap_or_default();
    let names: Vec<String> = ["train_loss".to_string(), "val_loss".into()]
        .into_iter()
        .chain(heads.iter().map(|n| head_column(n)))
        .chain(["val_iou".to_string()])
        .collect();
    let mut header = vec!["epoch".to_string(), "trials".into()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_sd"));
    }
    let mut csv = Csv::new(&header);
    let epochs = trials.iter().map(|h| h.epochs.len()).min().unwrap_or(0);
    for e in 0..epochs {
        let rows: Vec<Vec<f64>> = trials
            .iter()
            .map(|h| {
                let r = &h.epochs[e];
                let mut v = vec![r.train_loss, r.val_loss];
                v.extend(&r.head_val_losses);
                v.push(r.val_iou);
                v
            })
            .collect();
        let mut out = vec![(e + 1).to_string(), trials.len().to_string()];
        for c in 0..names.len() {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let (m, s) = mean_std(&col);
            out.push(num(m));
            out.push(num(s));
        }
        csv.push(&out);
    }
    csv
}

pub const METRICS_HEADER: [&str; 9] = ["image_id", "variant", "mode", "IoU", "Dice", "sensitivity", "specificity", "F1", "F2"];

/// Per-image rows followed by `mean` and `sd` rows.
pub fn metrics_csv(rows: &[ImageMetrics], variant: &str, mode: &str) -> Csv {
    let mut csv = Csv::new(&METRICS_HEADER);
    for r in rows {
        let mut cells = vec![r.id.clone(), variant.into(), mode.into()];
        cells.extend(r.metrics.values().iter().map(|&v| num(v)));
        csv.push(&cells);
    }
    let (means, sds) = summarize(rows.iter().map(|r| &r.metrics));
    for (label, vals) in [("mean", means), ("sd", sds)] {
        let mut cells = vec![label.to_string(), variant.into(), mode.into()];
        cells.extend(vals.iter().map(|&v| num(v)));
        csv.push(&cells);
    }
    csv
}

/// Per-metric means and sample standard deviations.
pub fn summarize<'a>(rows: impl Iterator<Item = &'a SegMetrics>) -> ([f64; 6], [f64; 6]) {
    let vals: Vec<[f64; 6]> = rows.map(SegMetrics::values).collect();
    let mut means = [0.0; 6];
    let mut sds = [0.0; 6];
    for k in 0..6 {
        let col: Vec<f64> = vals.iter().map(|v| v[k]).collect();
        (means[k], sds[k]) = mean_std(&col);
    }
    (means, sds)
}

/// Per-image metric columns from a metrics CSV, keyed by image id
/// (summary rows dropped).
pub fn read_metrics(text: &str) -> Option<Vec<(String, [f64; 6])>> {
    let (header, rows) = parse_csv(text);
    if header != METRICS_HEADER {
        return None;
    }
    rows.into_iter()
        .filter(|r| r.first().is_some_and(|id| id != "mean" && id != "sd"))
        .map(|r| {
            let mut v = [0.0; 6];
            for k in 0..6 {
                v[k] = r.get(3 + k)?.parse().ok()?;
            }
            Some((r[0].clone(), v))
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A self-contained SVG line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let pts = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#, h / 2.0, h / 2.0, escape(y_label));
    for (v, x, y, anchor) in [(x0, m, h - m + 16.0, "start"), (x1, w - m, h - m + 16.0, "end")] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
    for (v, y) in [(y0, h - m), (y1, m)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, m - 4.0, y + 4.0, tick(v));
    }
    for (k, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = m + 14.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#, w - m, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
