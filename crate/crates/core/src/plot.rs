//! Minimal self-contained SVG charts.
//!
//! Fixed 800x600 canvas; axis ranges follow the data with 5% padding on each
//! side. Output is a pure function of the input, so files can be diffed.

use std::fmt::Write;

use crate::stats::ols;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const PAD_FRACTION: f64 = 0.05;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            style: Style::Line,
        }
    }

    pub fn markers(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            style: Style::Markers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Text labels drawn next to the points of the first series.
    pub point_labels: Vec<String>,
}

/// Data range padded by 5% on each side; degenerate ranges are widened.
pub fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    (lo - PAD_FRACTION * span, hi + PAD_FRACTION * span)
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 6);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Self::default()
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn render(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = padded_range(all().map(|p| p.0));
        let (y0, y1) = padded_range(all().map(|p| p.1));
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        let xt = ticks(x0, x1);
        let xstep = nice_step(x1 - x0, 6);
        for t in &xt {
            let px = sx(*t);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_TOP + ph,
                MARGIN_TOP + ph + 5.0,
                MARGIN_TOP + ph + 20.0,
                fmt_tick(*t, xstep)
            );
        }
        let yt = ticks(y0, y1);
        let ystep = nice_step(y1 - y0, 6);
        for t in &yt {
            let py = sy(*t);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 5.0,
                MARGIN_LEFT - 8.0,
                py + 4.0,
                fmt_tick(*t, ystep)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            HEIGHT - 20.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            match series.style {
                Style::Line => {
                    let pts: Vec<String> = series
                        .points
                        .iter()
                        .filter(|p| p.0.is_finite() && p.1.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                        pts.join(" ")
                    );
                }
                Style::Markers => {
                    for &(x, y) in series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                }
            }
            let ly = MARGIN_TOP + 15.0 + 18.0 * k as f64;
            let lx = MARGIN_LEFT + pw - 150.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="4" fill="{color}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 6.0,
                lx + 18.0,
                escape(&series.label)
            );
        }
        if let Some(first) = self.series.first() {
            for (label, &(x, y)) in self.point_labels.iter().zip(&first.points) {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
                    sx(x) + 5.0,
                    sy(y) - 5.0,
                    escape(label)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Scatter plot with its least-squares line drawn across the data range.
pub fn scatter_with_fit(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    labels: &[String],
) -> String {
    let mut chart = Chart::new(title, x_label, y_label).with(Series::markers("data", points.to_vec()));
    chart.point_labels = labels.to_vec();
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    if let Ok(fit) = ols(&xs, &ys) {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        chart = chart.with(Series::line(
            "least squares",
            vec![(lo, fit.predict(lo)), (hi, fit.predict(hi))],
        ));
    }
    chart.render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_is_five_percent() {
        assert_eq!(padded_range([0.0, 10.0].into_iter()), (-0.5, 10.5));
        assert_eq!(padded_range([2.0].into_iter()), (1.9, 2.1));
        assert_eq!(padded_range(std::iter::empty()), (0.0, 1.0));
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(-0.5, 10.5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(fmt_tick(0.25, 0.05), "0.25");
        assert_eq!(fmt_tick(1960.0, 10.0), "1960");
    }

    #[test]
    fn render_is_deterministic_and_self_contained() {
        let pts = vec![(1.0, 2.0), (2.0, 3.5), (3.0, 7.0)];
        let a = scatter_with_fit("t & t", "x", "y", &pts, &["A".into(), "B".into(), "C".into()]);
        let b = scatter_with_fit("t & t", "x", "y", &pts, &["A".into(), "B".into(), "C".into()]);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains(r#"width="800" height="600""#));
        assert!(a.contains("t &amp; t"));
        assert_eq!(a.matches("<circle").count(), 3);
        assert_eq!(a.matches("<polyline").count(), 1);
        assert!(!a.contains("href"));
    }
}
