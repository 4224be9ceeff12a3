//! Minimal SVG line plots. Rendering is best-effort: callers log failures
//! and carry on, numeric outputs never depend on it.

use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 720.0;
const H: f64 = 440.0;
const MARGIN: [f64; 4] = [60.0, 20.0, 30.0, 50.0]; // left, right, top, bottom
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// horizontal reference line
    pub hline: Option<f64>,
}

fn bounds(it: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = it
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-300 {
        return Some((lo - 0.5, hi + 0.5));
    }
    let pad = 0.04 * (hi - lo);
    Some((lo - pad, hi + pad))
}

impl LinePlot {
    pub fn render(&self) -> String {
        let (x0, x1) = bounds(self.series.iter().flat_map(|s| s.x.iter().copied())).unwrap_or((0.0, 1.0));
        let ys = self.series.iter().flat_map(|s| s.y.iter().copied()).chain(self.hline);
        let (y0, y1) = bounds(ys).unwrap_or((0.0, 1.0));
        let [ml, mr, mt, mb] = MARGIN;
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * (W - ml - mr);
        let py = |y: f64| H - mb - (y - y0) / (y1 - y0) * (H - mt - mb);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - ml - mr,
            H - mt - mb
        );
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3e}</text>"#, px(fx), H - mb + 16.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.3}</text>"#, ml - 4.0, py(fy) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle">{}</text>"#, W / 2.0, esc(&self.title));
        if let Some(h) = self.hline {
            let _ = writeln!(
                s,
                r#"<line x1="{ml}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
                W - mr,
                py(h),
                py(h)
            );
        }
        for (k, ser) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<String> = ser
                .x
                .iter()
                .zip(&ser.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.4"{dash} points="{}"/>"#,
                pts.join(" ")
            );
            let ly = mt + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
                W - mr - 6.0,
                esc(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes the SVG, logging instead of failing.
    pub fn save(&self, path: &Path) {
        if let Err(e) = std::fs::write(path, self.render()) {
            log::warn!("plot {} not written: {e}", path.display());
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
