//! Static SVG line charts: ensemble means with shaded ±σ bands, optional
//! horizontal reference line and vertical marker. Output depends only on the
//! input, so identical data gives identical files.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
/// Polylines are thinned to about this many points.
const MAX_POINTS: usize = 1500;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One line; `sigma` (same length as `mean`) draws a band.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    /// Draw as a step function (capacity staircases).
    pub step: bool,
}

impl Line {
    pub fn new(label: impl Into<String>, x: Vec<f64>, mean: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            x,
            mean,
            sigma: None,
            step: false,
        }
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn stepped(mut self) -> Self {
        self.step = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    /// Horizontal reference (for example `γ_long`).
    pub reference: Option<f64>,
    /// Vertical marker (for example the outage slot).
    pub marker: Option<f64>,
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Indices kept when thinning `n` points.
fn thin(n: usize) -> Vec<usize> {
    if n <= MAX_POINTS {
        return (0..n).collect();
    }
    let step = n.div_ceil(MAX_POINTS);
    let mut idx: Vec<usize> = (0..n).step_by(step).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

impl Chart {
    pub fn to_svg(&self) -> Result<String> {
        if self.lines.is_empty() || self.lines.iter().all(|l| l.mean.is_empty()) {
            return Err(Error::config(format!("chart `{}` has no data", self.title)));
        }
        for l in &self.lines {
            if l.x.len() != l.mean.len() || l.sigma.as_ref().is_some_and(|s| s.len() != l.mean.len()) {
                return Err(Error::Dimension(format!("line `{}`: series lengths differ", l.label)));
            }
        }
        let finite = |v: &f64| v.is_finite();
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for l in &self.lines {
            for (i, (&x, &m)) in l.x.iter().zip(&l.mean).enumerate() {
                if !finite(&x) || !finite(&m) {
                    continue;
                }
                x0 = x0.min(x);
                x1 = x1.max(x);
                let s = l.sigma.as_ref().map_or(0.0, |s| if s[i].is_finite() { s[i] } else { 0.0 });
                y0 = y0.min(m - s);
                y1 = y1.max(m + s);
            }
        }
        if let Some(r) = self.reference {
            y0 = y0.min(r);
            y1 = y1.max(r);
        }
        if !x0.is_finite() {
            return Err(Error::config(format!("chart `{}` has no finite points", self.title)));
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            let pad = if y0 == 0.0 { 1.0 } else { y0.abs() * 0.1 };
            y0 -= pad;
            y1 += pad;
        } else {
            let pad = (y1 - y0) * 0.05;
            y0 -= pad;
            y1 += pad;
        }
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            o,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        // axes and ticks
        let _ = writeln!(
            o,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=5 {
            let f = k as f64 / 5.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(
                o,
                r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#ddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(xv)
            );
            let _ = writeln!(
                o,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0,
                fmt_tick(yv)
            );
        }
        let _ = writeln!(
            o,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, l) in self.lines.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let idx: Vec<usize> = thin(l.mean.len())
                .into_iter()
                .filter(|&i| finite(&l.x[i]) && finite(&l.mean[i]))
                .collect();
            if idx.is_empty() {
                continue;
            }
            if let Some(sig) = &l.sigma {
                let mut pts = String::new();
                for &i in &idx {
                    let s = if sig[i].is_finite() { sig[i] } else { 0.0 };
                    let _ = write!(pts, "{:.2},{:.2} ", sx(l.x[i]), sy(l.mean[i] + s));
                }
                for &i in idx.iter().rev() {
                    let s = if sig[i].is_finite() { sig[i] } else { 0.0 };
                    let _ = write!(pts, "{:.2},{:.2} ", sx(l.x[i]), sy(l.mean[i] - s));
                }
                let _ = writeln!(
                    o,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.trim_end()
                );
            }
            let mut pts = String::new();
            let mut prev: Option<f64> = None;
            for &i in &idx {
                let (px, py) = (sx(l.x[i]), sy(l.mean[i]));
                if l.step {
                    if let Some(py0) = prev {
                        let _ = write!(pts, "{px:.2},{py0:.2} ");
                    }
                    prev = Some(py);
                }
                let _ = write!(pts, "{px:.2},{py:.2} ");
            }
            let _ = writeln!(
                o,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.trim_end()
            );
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let lx = LEFT + pw + 10.0;
            let _ = writeln!(
                o,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                lx + 18.0,
                lx + 24.0,
                ly + 4.0,
                escape(&l.label)
            );
        }
        if let Some(r) = self.reference {
            let py = sy(r);
            let _ = writeln!(
                o,
                r#"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
                LEFT + pw
            );
        }
        if let Some(m) = self.marker {
            if (x0..=x1).contains(&m) {
                let px = sx(m);
                let _ = writeln!(
                    o,
                    r#"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="2 3"/>"#,
                    TOP + ph
                );
            }
        }
        o.push_str("</svg>\n");
        Ok(o)
    }
}
