use std::fmt::Write as _;
use std::path::Path;

use super::{omega_to_hz, OptRecord, OptRun};
use crate::error::Result;

const WIDTH: f64 = 640.0;
const PANEL: f64 = 260.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Panel<'a> {
    title: &'a str,
    top: f64,
    value: fn(&OptRecord) -> f64,
}

/// Static SVG with two panels against evaluations: best objective and frequency in Hz.
pub fn write_history_svg(path: &Path, runs: &[(&str, &OptRun)]) -> Result<()> {
    let height = 2.0 * (PANEL + MARGIN) + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let x_max = runs.iter().map(|(_, r)| r.evaluations()).max().unwrap_or(1).max(1) as f64;
    let panels = [
        Panel { title: "best objective", top: MARGIN, value: |r| r.best_objective },
        Panel { title: "frequency (Hz)", top: 2.0 * MARGIN + PANEL, value: |r| omega_to_hz(r.omega) },
    ];
    for panel in &panels {
        let ys: Vec<f64> =
            runs.iter().flat_map(|(_, r)| r.history.iter().map(panel.value)).filter(|v| v.is_finite()).collect();
        let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(y0.is_finite() && y1.is_finite()) {
            (y0, y1) = (0.0, 1.0);
        }
        if y1 - y0 < 1e-12 * y0.abs().max(1.0) {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        let plot_w = WIDTH - 2.0 * MARGIN;
        let px = |x: f64| MARGIN + plot_w * x / x_max;
        let py = |y: f64| panel.top + PANEL * (1.0 - (y - y0) / (y1 - y0));
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{}" width="{plot_w}" height="{PANEL}" fill="none" stroke="black"/>"#,
            panel.top
        );
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}">{}</text>"#, panel.top - 8.0, panel.title);
        for (v, anchor_y) in [(y1, panel.top + 4.0), (y0, panel.top + PANEL)] {
            let _ = writeln!(s, r#"<text x="{}" y="{anchor_y}" text-anchor="end">{v:.3e}</text>"#, MARGIN - 4.0);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{x_max} evaluations</text>"#,
            WIDTH - MARGIN,
            panel.top + PANEL + 16.0
        );
        for (k, (_, run)) in runs.iter().enumerate() {
            let pts: Vec<String> = run
                .history
                .iter()
                .filter(|r| (panel.value)(r).is_finite())
                .map(|r| format!("{:.2},{:.2}", px(r.evaluations as f64), py((panel.value)(r))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                COLORS[k % COLORS.len()],
                pts.join(" ")
            );
        }
    }
    for (k, (name, _)) in runs.iter().enumerate() {
        let y = height - MARGIN / 2.0;
        let x = MARGIN + 150.0 * k as f64;
        let _ =
            writeln!(s, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{}"/>"#, y - 4.0, COLORS[k % COLORS.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{name}</text>"#, x + 20.0);
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
