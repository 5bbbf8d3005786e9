//! Static strip plots of per-run metrics, one panel per metric.

use std::fmt::Write;

use gmop::evaljoint::MetricsReport;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_B: f64 = 110.0;
const MARGIN_T: f64 = 30.0;

type Metric = (&'static str, fn(&MetricsReport) -> f64);

const METRICS: [Metric; 3] = [
    ("joint minADE (m)", |r| r.joint_min_ade),
    ("joint minFDE (m)", |r| r.joint_min_fde),
    ("joint NLL", |r| r.joint_nll),
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders every run as a dot and each variant mean as a bar, variants in `order`.
pub fn strip_plot(reports: &[MetricsReport], order: &[String]) -> String {
    let width = METRICS.len() as f64 * (PANEL_W + MARGIN_L) + 20.0;
    let height = PANEL_H + MARGIN_T + MARGIN_B;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, (title, get)) in METRICS.iter().enumerate() {
        let x0 = p as f64 * (PANEL_W + MARGIN_L) + MARGIN_L;
        let values: Vec<f64> = reports.iter().map(get).filter(|v| v.is_finite()).collect();
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.1).max(1e-6);
        let (lo, hi) = (lo - pad, hi + pad);
        let y = |v: f64| MARGIN_T + PANEL_H * (1.0 - (v - lo) / (hi - lo));
        let slot = PANEL_W / order.len().max(1) as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, x0 + PANEL_W / 2.0, escape(title));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{MARGIN_T:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="black"/>"#
        );
        for tick in 0..=4 {
            let v = lo + (hi - lo) * tick as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0, y(v) + 4.0);
        }
        for (k, name) in order.iter().enumerate() {
            let cx = x0 + slot * (k as f64 + 0.5);
            let runs: Vec<f64> = reports.iter().filter(|r| &r.variant == name).map(get).filter(|v| v.is_finite()).collect();
            for (j, v) in runs.iter().enumerate() {
                let jitter = (j as f64 - (runs.len() as f64 - 1.0) / 2.0) * 3.0;
                let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#4477aa"/>"##, cx + jitter, y(*v));
            }
            if !runs.is_empty() {
                let mean = runs.iter().sum::<f64>() / runs.len() as f64;
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#cc3311" stroke-width="2"/>"##,
                    cx - slot * 0.3,
                    cx + slot * 0.3,
                    y(mean),
                    y(mean)
                );
            }
            let ty = MARGIN_T + PANEL_H + 8.0;
            let _ = writeln!(
                s,
                r#"<text x="{cx:.1}" y="{ty:.1}" transform="rotate(45 {cx:.1} {ty:.1})">{}</text>"#,
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
