//! Deterministic SVG charts: histogram, scatter, line profiles, and the
//! two-panel simulation figure. No timestamps or random ids are embedded, so
//! identical inputs produce identical bytes.

use std::fmt::Write as _;

const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 42.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Line,
    Points,
    Bars,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub kind: SeriesKind,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
}

fn fmt(v: f64) -> String {
    // Fixed-precision coordinates keep the output byte-stable.
    format!("{v:.3}")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(t);
        t += step;
    }
    out
}

fn data_bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let mut xb = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yb = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            xb = (xb.0.min(x), xb.1.max(x));
            yb = (yb.0.min(y), yb.1.max(y));
        }
    }
    if !xb.0.is_finite() {
        xb = (0.0, 1.0);
        yb = (0.0, 1.0);
    }
    if xb.0 == xb.1 {
        xb = (xb.0 - 0.5, xb.1 + 0.5);
    }
    if yb.0 == yb.1 {
        yb = (yb.0 - 0.5, yb.1 + 0.5);
    }
    // Bars sit on the y = 0 baseline.
    if series.iter().any(|s| s.kind == SeriesKind::Bars) {
        yb.0 = yb.0.min(0.0);
    }
    (xb, yb)
}

impl Chart {
    fn render(&self, out: &mut String, ox: f64, oy: f64, w: f64, h: f64) {
        let (xb, yb) = data_bounds(&self.series);
        let plot_w = w - MARGIN_L - MARGIN_R;
        let plot_h = h - MARGIN_T - MARGIN_B;
        let px = |x: f64| ox + MARGIN_L + (x - xb.0) / (xb.1 - xb.0) * plot_w;
        let py = |y: f64| oy + MARGIN_T + plot_h - (y - yb.0) / (yb.1 - yb.0) * plot_h;

        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333" stroke-width="1"/>"##,
            fmt(ox + MARGIN_L),
            fmt(oy + MARGIN_T),
            fmt(plot_w),
            fmt(plot_h)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            fmt(ox + MARGIN_L + plot_w / 2.0),
            fmt(oy + 18.0),
            self.title
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            fmt(ox + MARGIN_L + plot_w / 2.0),
            fmt(oy + h - 8.0),
            self.xlabel
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 {} {})">{}</text>"#,
            fmt(ox + 14.0),
            fmt(oy + MARGIN_T + plot_h / 2.0),
            fmt(ox + 14.0),
            fmt(oy + MARGIN_T + plot_h / 2.0),
            self.ylabel
        );
        for t in nice_ticks(xb.0, xb.1) {
            let _ = writeln!(
                out,
                r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#333" stroke-width="1"/>"##,
                fmt(px(t)),
                fmt(oy + MARGIN_T + plot_h),
                fmt(oy + MARGIN_T + plot_h + 4.0)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif">{}</text>"#,
                fmt(px(t)),
                fmt(oy + MARGIN_T + plot_h + 16.0),
                fmt_tick(t)
            );
        }
        for t in nice_ticks(yb.0, yb.1) {
            let _ = writeln!(
                out,
                r##"<line x1="{1}" y1="{0}" x2="{2}" y2="{0}" stroke="#333" stroke-width="1"/>"##,
                fmt(py(t)),
                fmt(ox + MARGIN_L - 4.0),
                fmt(ox + MARGIN_L)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{}</text>"#,
                fmt(ox + MARGIN_L - 7.0),
                fmt(py(t) + 3.5),
                fmt_tick(t)
            );
        }

        for (si, s) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            match s.kind {
                SeriesKind::Line => {
                    if s.points.len() < 2 {
                        continue;
                    }
                    let pts: Vec<String> = s
                        .points
                        .iter()
                        .map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y))))
                        .collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.3" opacity="0.9"/>"#,
                        pts.join(" ")
                    );
                }
                SeriesKind::Points => {
                    for &(x, y) in &s.points {
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{}" cy="{}" r="2.2" fill="{color}" opacity="0.7"/>"#,
                            fmt(px(x)),
                            fmt(py(y))
                        );
                    }
                }
                SeriesKind::Bars => {
                    // Uniform bin width inferred from consecutive centers.
                    let bw = if s.points.len() > 1 {
                        (s.points[1].0 - s.points[0].0).abs()
                    } else {
                        (xb.1 - xb.0) / 10.0
                    };
                    for &(x, y) in &s.points {
                        let (y0, y1) = (py(y), py(0.0));
                        let _ = writeln!(
                            out,
                            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" opacity="0.8"/>"#,
                            fmt(px(x - bw / 2.0) + 0.5),
                            fmt(y0),
                            fmt((px(x + bw / 2.0) - px(x - bw / 2.0) - 1.0).max(0.5)),
                            fmt((y1 - y0).max(0.0))
                        );
                    }
                }
            }
        }

        // Legend (skipped for single unnamed series).
        let named: Vec<(usize, &Series)> = self
            .series
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.name.is_empty())
            .collect();
        for (row, (si, s)) in named.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let ly = oy + MARGIN_T + 12.0 + row as f64 * 14.0;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#,
                fmt(ox + MARGIN_L + 8.0),
                fmt(ly - 9.0)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">{}</text>"#,
                fmt(ox + MARGIN_L + 22.0),
                fmt(ly),
                s.name
            );
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Render one or more charts side by side as a standalone SVG document.
pub fn render_figure(charts: &[Chart], panel_w: f64, panel_h: f64) -> String {
    let total_w = panel_w * charts.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        fmt(total_w),
        fmt(panel_h),
        fmt(total_w),
        fmt(panel_h)
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        fmt(total_w),
        fmt(panel_h)
    );
    for (i, chart) in charts.iter().enumerate() {
        chart.render(&mut out, i as f64 * panel_w, 0.0, panel_w, panel_h);
    }
    out.push_str("</svg>\n");
    out
}

/// Equal-width bin counts over [min, max]; the top edge is inclusive so the
/// counts always sum to `values.len()`.
pub fn histogram_counts(values: &[f64], bins: usize) -> (Vec<usize>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (lo.min(0.0), lo.min(0.0) + 1.0)
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[i.min(bins - 1)] += 1;
    }
    (counts, lo, hi)
}

pub fn histogram_svg(values: &[f64], bins: usize, title: &str, xlabel: &str) -> String {
    let (counts, lo, hi) = histogram_counts(values, bins);
    let bw = (hi - lo) / bins as f64;
    let points: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + (i as f64 + 0.5) * bw, c as f64))
        .collect();
    render_figure(
        &[Chart {
            title: title.to_string(),
            xlabel: xlabel.to_string(),
            ylabel: "count".to_string(),
            series: vec![Series {
                name: String::new(),
                kind: SeriesKind::Bars,
                points,
            }],
        }],
        460.0,
        320.0,
    )
}

pub fn scatter_svg(
    groups: &[(String, Vec<(f64, f64)>)],
    title: &str,
    xlabel: &str,
    ylabel: &str,
) -> String {
    render_figure(
        &[Chart {
            title: title.to_string(),
            xlabel: xlabel.to_string(),
            ylabel: ylabel.to_string(),
            series: groups
                .iter()
                .map(|(name, points)| Series {
                    name: name.clone(),
                    kind: SeriesKind::Points,
                    points: points.clone(),
                })
                .collect(),
        }],
        460.0,
        320.0,
    )
}

pub fn profile_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    render_figure(
        &[Chart {
            title: title.to_string(),
            xlabel: xlabel.to_string(),
            ylabel: ylabel.to_string(),
            series: vec![Series {
                name: String::new(),
                kind: SeriesKind::Line,
                points: points.to_vec(),
            }],
        }],
        560.0,
        320.0,
    )
}

/// Two-panel simulation figure: leader-relative trajectories on the left,
/// intensity and interactive weight on the right.
pub fn sim_svg(left: Chart, right: Chart) -> String {
    render_figure(&[left, right], 460.0, 320.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_sum_to_input_size() {
        let values: Vec<f64> = (0..997).map(|i| (i as f64 * 0.37).sin()).collect();
        let (counts, lo, hi) = histogram_counts(&values, 24);
        assert_eq!(counts.iter().sum::<usize>(), 997);
        assert!(lo < hi);
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let pts: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i as f64 * 0.3).cos())).collect();
        let a = profile_svg(&pts, "p", "t", "y");
        let b = profile_svg(&pts, "p", "t", "y");
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        // No volatile content.
        assert!(!a.contains("date") && !a.contains("time"));
    }

    #[test]
    fn different_inputs_change_the_bytes() {
        let a = histogram_svg(&[0.0, 0.5, 1.0], 4, "h", "x");
        let b = histogram_svg(&[0.0, 0.5, 0.9], 4, "h", "x");
        assert_ne!(a, b);
    }

    #[test]
    fn figure_has_one_panel_per_chart() {
        let chart = |t: &str| Chart {
            title: t.to_string(),
            xlabel: "x".into(),
            ylabel: "y".into(),
            series: vec![Series {
                name: "s".into(),
                kind: SeriesKind::Line,
                points: vec![(0.0, 0.0), (1.0, 1.0)],
            }],
        };
        let svg = sim_svg(chart("left"), chart("right"));
        assert_eq!(svg.matches("polyline").count(), 2);
        assert!(svg.contains(">left<") && svg.contains(">right<"));
    }

    #[test]
    fn constant_series_still_renders() {
        let svg = profile_svg(&[(0.0, 2.0), (1.0, 2.0)], "c", "t", "y");
        assert!(svg.contains("polyline"));
    }
}
