//! Static SVG figures: stacked line panels and heatmaps. Each file starts
//! with comments recording where its data came from.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 46.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Markers,
    LineMarkers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Shaded band `(lower, upper)` drawn under the line.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            xs,
            ys,
            band: None,
            style: Style::Line,
        }
    }

    pub fn with_style(mut self, style: Style) -> Self {
        self.style = style;
        self
    }

    pub fn with_band(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.band = Some((lower, upper));
        self
    }
}

#[derive(Debug, Clone)]
pub enum Panel {
    Lines {
        title: String,
        x_label: String,
        y_label: String,
        log_x: bool,
        series: Vec<Series>,
    },
    Heatmap {
        title: String,
        x_label: String,
        y_label: String,
        xs: Vec<f64>,
        ys: Vec<f64>,
        /// `values[i][j]` at `(xs[i], ys[j])`; NaN cells are left blank.
        values: Vec<Vec<f64>>,
    },
}

pub struct Figure {
    pub provenance: Vec<String>,
    pub panels: Vec<Panel>,
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Sequential blue-to-yellow colormap on `t ∈ [0, 1]`.
fn colormap(t: f64) -> String {
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (stops[i], stops[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

struct Frame {
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn plot_width() -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_height() -> f64 {
        PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }

    fn tx(&self, v: f64) -> f64 {
        let v = if self.log_x { v.log10() } else { v };
        MARGIN_LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * Self::plot_width()
    }

    fn ty(&self, v: f64) -> f64 {
        self.top + MARGIN_TOP + (1.0 - (v - self.y.0) / (self.y.1 - self.y.0)) * Self::plot_height()
    }

    fn axes(&self, svg: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (left, top) = (MARGIN_LEFT, self.top + MARGIN_TOP);
        let (w, h) = (Self::plot_width(), Self::plot_height());
        let _ = writeln!(svg, r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#333"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
            left + w / 2.0,
            self.top + 20.0,
            escape(title)
        );
        let x_ticks = if self.log_x && self.x.1 - self.x.0 >= 1.0 {
            (self.x.0.ceil() as i64..=self.x.1.floor() as i64).map(|k| k as f64).collect()
        } else {
            ticks(self.x.0, self.x.1)
        };
        for t in x_ticks {
            let px = MARGIN_LEFT + (t - self.x.0) / (self.x.1 - self.x.0) * w;
            let text = if self.log_x { label(10f64.powf(t)) } else { label(t) };
            let _ = writeln!(svg, r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#333"/>"##, top + h, top + h + 4.0);
            let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle" font-size="11">{text}</text>"#, top + h + 16.0);
        }
        for t in ticks(self.y.0, self.y.1) {
            let py = self.ty(t);
            let _ = writeln!(svg, r##"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="#333"/>"##, left - 4.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#, left - 6.0, py + 4.0, label(t));
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            left + w / 2.0,
            top + h + 34.0,
            escape(x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{0}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {0})">{1}</text>"#,
            top + h / 2.0,
            escape(y_label)
        );
    }
}

fn points(frame: &Frame, xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!frame.log_x || **x > 0.0))
        .map(|(x, y)| (frame.tx(*x), frame.ty(*y)))
        .collect()
}

fn path(points: &[(f64, f64)]) -> String {
    points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

fn render_lines(svg: &mut String, top: f64, title: &str, x_label: &str, y_label: &str, log_x: bool, series: &[Series]) {
    let xform = |v: f64| if log_x { v.log10() } else { v };
    let x = finite_range(series.iter().flat_map(|s| s.xs.iter().copied()).filter(|v| !log_x || *v > 0.0).map(xform));
    let y = finite_range(series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi).copied());
        s.ys.iter().copied().chain(band).collect::<Vec<_>>()
    }));
    let pad = 0.05 * (y.1 - y.0);
    let frame = Frame {
        top,
        x,
        y: (y.0 - pad, y.1 + pad),
        log_x,
    };
    frame.axes(svg, title, x_label, y_label);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some((lo, hi)) = &s.band {
            let mut outline = points(&frame, &s.xs, hi);
            let mut lower = points(&frame, &s.xs, lo);
            lower.reverse();
            outline.extend(lower);
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, path(&outline));
        }
        let pts = points(&frame, &s.xs, &s.ys);
        if matches!(s.style, Style::Line | Style::Dashed | Style::LineMarkers) && pts.len() > 1 {
            let dash = if s.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, path(&pts));
        }
        if matches!(s.style, Style::Markers | Style::LineMarkers) {
            for (px, py) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = top + MARGIN_TOP + 14.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
    }
}

#[allow(clippy::too_many_arguments)]
fn render_heatmap(svg: &mut String, top: f64, title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>]) {
    let edges = |c: &[f64]| -> Vec<f64> {
        if c.len() == 1 {
            return vec![c[0] - 0.5, c[0] + 0.5];
        }
        let mut e = vec![c[0] - (c[1] - c[0]) / 2.0];
        e.extend(c.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        e.push(c[c.len() - 1] + (c[c.len() - 1] - c[c.len() - 2]) / 2.0);
        e
    };
    let (xe, ye) = (edges(xs), edges(ys));
    let frame = Frame {
        top,
        x: (xe[0], xe[xe.len() - 1]),
        y: (ye[0], ye[ye.len() - 1]),
        log_x: false,
    };
    let (vlo, vhi) = finite_range(values.iter().flatten().copied());
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let (x0, x1) = (frame.tx(xe[i]), frame.tx(xe[i + 1]));
            let (y0, y1) = (frame.ty(ye[j + 1]), frame.ty(ye[j]));
            let _ = writeln!(
                svg,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}</title></rect>"#,
                x1 - x0,
                y1 - y0,
                colormap((v - vlo) / (vhi - vlo)),
                label(*v)
            );
        }
    }
    frame.axes(svg, title, x_label, y_label);
    let lx = WIDTH - MARGIN_RIGHT + 20.0;
    let h = Frame::plot_height();
    for k in 0..20 {
        let t = 1.0 - k as f64 / 19.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            top + MARGIN_TOP + h * k as f64 / 20.0,
            h / 20.0 + 0.5,
            colormap(t)
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, lx + 20.0, top + MARGIN_TOP + 8.0, label(vhi));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, lx + 20.0, top + MARGIN_TOP + h, label(vlo));
}

impl Figure {
    pub fn render(&self) -> String {
        let height = PANEL_HEIGHT * self.panels.len() as f64;
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        for line in &self.provenance {
            let _ = writeln!(svg, "<!-- {} -->", line.replace("--", "- -"));
        }
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (k, panel) in self.panels.iter().enumerate() {
            let top = PANEL_HEIGHT * k as f64;
            match panel {
                Panel::Lines { title, x_label, y_label, log_x, series } => {
                    render_lines(&mut svg, top, title, x_label, y_label, *log_x, series)
                }
                Panel::Heatmap { title, x_label, y_label, xs, ys, values } => {
                    render_heatmap(&mut svg, top, title, x_label, y_label, xs, ys, values)
                }
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.03, 0.97);
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|v| (0.03..=0.97).contains(v)));
        assert!((t[1] - t[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn figure_carries_provenance_and_survives_nan() {
        let fig = Figure {
            provenance: vec!["source: trajectory.csv -- columns x1".into()],
            panels: vec![
                Panel::Lines {
                    title: "a <b>".into(),
                    x_label: "t".into(),
                    y_label: "y".into(),
                    log_x: true,
                    series: vec![Series::line("s", vec![1e-4, 1e-3, 1e-2], vec![1.0, f64::NAN, 3.0]).with_band(
                        vec![0.5, 0.5, 2.0],
                        vec![1.5, 1.5, 4.0],
                    )],
                },
                Panel::Heatmap {
                    title: "h".into(),
                    x_label: "k1".into(),
                    y_label: "k2".into(),
                    xs: vec![1.0, 2.0],
                    ys: vec![5.0],
                    values: vec![vec![1.0], vec![f64::NAN]],
                },
            ],
        };
        let svg = fig.render();
        assert!(svg.contains("<!-- source: trajectory.csv - - columns x1 -->"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert!(!svg.contains("NaN"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
