// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal deterministic SVG charts: line charts for layer profiles and
//! scatter plots with a fitted line for regressions.
//!
//! Coordinates are printed with two decimals and colors come from a fixed
//! palette, so identical inputs always give identical bytes.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const TICKS: usize = 5;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn covering(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 0.5 };
            return Range {
                lo: lo - pad,
                hi: hi + pad,
            };
        }
        let pad = (hi - lo) * 0.05;
        Range {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn to_x(self, v: f64) -> f64 {
        LEFT + (v - self.lo) / (self.hi - self.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn to_y(self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, axes: &Axes) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(&axes.title)
    );
}

fn frame(out: &mut String, axes: &Axes, xr: Range, yr: Range, x_ticks: &[(f64, String)]) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r##"<g class="axes" stroke="#333" fill="none"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"##
    );
    let _ = writeln!(out, r#"<g class="ticks">"#);
    for k in 0..TICKS {
        let v = yr.lo + (yr.hi - yr.lo) * k as f64 / (TICKS - 1) as f64;
        let y = yr.to_y(v);
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    for (v, label) in x_ticks {
        let x = xr.to_x(*v);
        let _ = writeln!(
            out,
            r##"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            y0 + 16.0,
            escape(label)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text class="y-label" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&axes.y_label)
    );
}

fn legend(out: &mut String, labels: &[(&str, &str)]) {
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (k, (label, color)) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 4.0,
            x + 18.0,
            y + 2.0,
            escape(label)
        );
    }
    let _ = writeln!(out, "</g>");
}

fn integer_ticks(xs: impl IntoIterator<Item = f64>) -> Vec<(f64, String)> {
    let mut ticks: Vec<(f64, String)> = Vec::new();
    for x in xs {
        if ticks.iter().all(|(v, _)| *v != x) {
            ticks.push((x, format!("{x}")));
        }
    }
    ticks.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Thin out dense axes.
    let step = ticks.len().div_ceil(12).max(1);
    ticks.into_iter().step_by(step).collect()
}

/// One polyline per series.
pub fn line_chart(axes: &Axes, series: &[Series]) -> String {
    let xr = Range::covering(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = Range::covering(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    header(&mut out, axes);
    let ticks = integer_ticks(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    frame(&mut out, axes, xr, yr, &ticks);
    let mut labels = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", xr.to_x(x), yr.to_y(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        labels.push((s.label.as_str(), color));
    }
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Scatter of `points` with the line `y = slope * x + intercept` drawn across the x-range.
pub fn scatter_with_fit(axes: &Axes, points: &[(f64, f64)], slope: f64, intercept: f64, fit_label: &str) -> String {
    let xr = Range::covering(points.iter().map(|p| p.0));
    let (fx0, fx1) = (xr.lo, xr.hi);
    let line = [(fx0, slope * fx0 + intercept), (fx1, slope * fx1 + intercept)];
    let yr = Range::covering(points.iter().map(|p| p.1).chain(line.iter().map(|p| p.1)));
    let mut out = String::new();
    header(&mut out, axes);
    let ticks: Vec<(f64, String)> = (0..TICKS)
        .map(|k| {
            let v = xr.lo + (xr.hi - xr.lo) * k as f64 / (TICKS - 1) as f64;
            (v, format!("{v:.3}"))
        })
        .collect();
    frame(&mut out, axes, xr, yr, &ticks);
    let _ = writeln!(out, r#"<g class="markers" fill="{}">"#, PALETTE[0]);
    for &(x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4"/>"#, xr.to_x(x), yr.to_y(y));
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
        xr.to_x(line[0].0),
        yr.to_y(line[0].1),
        xr.to_x(line[1].0),
        yr.to_y(line[1].1),
        PALETTE[1]
    );
    legend(&mut out, &[("checkpoints", PALETTE[0]), (fit_label, PALETTE[1])]);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> Axes {
        Axes {
            title: "t".into(),
            x_label: "layer".into(),
            y_label: "cos".into(),
        }
    }

    #[test]
    fn one_polyline_per_series() {
        let s = Series {
            label: "a<b".into(),
            points: vec![(1.0, 0.2), (2.0, 0.4), (3.0, 0.3)],
        };
        let svg = line_chart(&axes(), &[s]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 3);
    }

    #[test]
    fn flat_series_has_finite_coordinates() {
        let s = Series {
            label: "flat".into(),
            points: vec![(1.0, 1.0), (2.0, 1.0)],
        };
        let svg = line_chart(&axes(), &[s]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn scatter_shape() {
        let pts = [(0.1, 3.0), (0.2, 2.0), (0.4, 1.5), (0.5, 0.7)];
        let svg = scatter_with_fit(&axes(), &pts, -5.0, 3.4, "fit");
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("<line class=\"fit\"").count(), 1);
    }
}
