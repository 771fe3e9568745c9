//! Minimal SVG line plots and heatmaps. Axis ranges and scales are also
//! written as comments so plots can be checked without rendering.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub label: String,
    pub scale: Scale,
    pub min: f64,
    pub max: f64,
}

impl Axis {
    pub fn linear(label: &str, min: f64, max: f64) -> Self {
        Self { label: label.into(), scale: Scale::Linear, min, max }
    }

    pub fn log10(label: &str, min: f64, max: f64) -> Self {
        Self { label: label.into(), scale: Scale::Log10, min, max }
    }

    fn unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.min) / (self.max - self.min),
            Scale::Log10 => (v.max(self.min).log10() - self.min.log10()) / (self.max.log10() - self.min.log10()),
        }
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Linear => (0..=5).map(|i| self.min + (self.max - self.min) * f64::from(i) / 5.0).collect(),
            Scale::Log10 => {
                let lo = self.min.log10().ceil() as i32;
                let hi = self.max.log10().floor() as i32;
                (lo..=hi).map(|e| 10f64.powi(e)).collect()
            }
        }
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
}

fn axis_comment(out: &mut String, name: &str, axis: &Axis) {
    let _ = writeln!(
        out,
        "<!-- axis {name}: label=\"{}\" scale={:?} min={} max={} -->",
        escape(&axis.label),
        axis.scale,
        axis.min,
        axis.max
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64, scale: Scale) -> String {
    match scale {
        Scale::Log10 => format!("1e{}", v.log10().round() as i32),
        Scale::Linear => {
            let r = (v * 100.0).round() / 100.0;
            format!("{r}")
        }
    }
}

/// Line plot of one or more series.
pub fn line_plot(title: &str, x: &Axis, y: &Axis, series: &[Series<'_>]) -> String {
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    axis_comment(&mut out, "x", x);
    axis_comment(&mut out, "y", y);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |v: f64| MARGIN_L + x.unit(v).clamp(0.0, 1.0) * pw;
    let py = |v: f64| MARGIN_T + (1.0 - y.unit(v).clamp(0.0, 1.0)) * ph;

    let _ = writeln!(out, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in x.ticks() {
        let xx = px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{xx:.2}" y1="{MARGIN_T}" x2="{xx:.2}" y2="{:.2}" stroke="#ddd"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            MARGIN_T + ph,
            MARGIN_T + ph + 16.0,
            tick_label(t, x.scale)
        );
    }
    for t in y.ticks() {
        let yy = py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_L}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            yy + 4.0,
            tick_label(t, y.scale)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(&x.label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&y.label)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(a, b)| format!("{:.2},{:.2}", px(a), py(b))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.8" points="{}"/>"#, pts.join(" "));
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        let lx = MARGIN_L + pw + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Row-major `rows × cols` grid drawn with row 0 at the bottom.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, values: &[f64], rows: usize, cols: usize) -> String {
    assert_eq!(values.len(), rows * cols, "heatmap size mismatch");
    let cell_w = (520.0 / cols as f64).max(1.0);
    let cell_h = (300.0 / rows as f64).max(4.0);
    let width = MARGIN_L + cell_w * cols as f64 + 20.0;
    let height = MARGIN_T + cell_h * rows as f64 + MARGIN_B;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut out = String::new();
    header(&mut out, width, height, title);
    let _ = writeln!(out, "<!-- heatmap: rows={rows} cols={cols} min={lo} max={hi} x=\"{}\" y=\"{}\" -->", escape(x_label), escape(y_label));
    for r in 0..rows {
        let y = MARGIN_T + cell_h * (rows - 1 - r) as f64;
        for c in 0..cols {
            let t = (values[r * cols + c] - lo) / span;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{cell_h:.2}" fill="{}"/>"#,
                MARGIN_L + cell_w * c as f64,
                cell_w + 0.05,
                colour_map(t)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + cell_w * cols as f64 / 2.0,
        height - 15.0,
        escape(x_label)
    );
    let mid = MARGIN_T + cell_h * rows as f64 / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="18" y="{mid:.2}" text-anchor="middle" transform="rotate(-90 18 {mid:.2})">{}</text>"#,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}

/// Dark blue → yellow ramp.
fn colour_map(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (68.0 + t * (253.0 - 68.0)) as u8;
    let g = (1.0 + t * (231.0 - 1.0)) as u8;
    let b = (84.0 + t * (37.0 - 84.0)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}
