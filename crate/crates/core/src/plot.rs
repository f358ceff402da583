//! Minimal self-contained SVG line plots for run traces.

use std::fmt::Write as _;

use crate::sim::{RunTrace, SampleRecord};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
/// Plots decimate to at most this many points per series.
const MAX_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub x: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round a span to 1, 2 or 5 times a power of ten.
fn nice_step(span: f64, ticks: usize) -> f64 {
    let raw = span / ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1e-6);
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.decimals$}")
    }
}

impl LinePlot {
    pub fn render_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| &p.0));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| &p.1));
        let (Some((x0, x1)), Some((y0, y1))) = (bounds(xs), bounds(ys)) else {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
                WIDTH / 2.0,
                HEIGHT / 2.0
            );
            s.push_str("</svg>\n");
            return s;
        };
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (axis_lo, axis_hi, is_x) in [(x0, x1, true), (y0, y1, false)] {
            let step = nice_step(axis_hi - axis_lo, 6);
            let mut v = (axis_lo / step).ceil() * step;
            while v <= axis_hi + 1e-9 * step {
                let label = fmt_tick(v, step);
                if is_x {
                    let x = px(v);
                    let _ = writeln!(
                        s,
                        r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{MARGIN_T}" stroke="#ddd"/><text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"##,
                        MARGIN_T + ph,
                        MARGIN_T + ph + 16.0
                    );
                } else {
                    let y = py(v);
                    let _ = writeln!(
                        s,
                        r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                        MARGIN_L + pw,
                        MARGIN_L - 6.0,
                        y + 4.0
                    );
                }
                v += step;
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let stride = series.points.len().div_ceil(MAX_POINTS).max(1);
            let mut d = String::new();
            let mut pen_down = false;
            for (x, y) in series.points.iter().step_by(stride) {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let cmd = if pen_down { 'L' } else { 'M' };
                let _ = write!(d, "{cmd}{:.2},{:.2} ", px(*x), py(*y));
                pen_down = true;
            }
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
                d.trim_end()
            );
            let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
                MARGIN_L + 10.0,
                MARGIN_L + 30.0,
                MARGIN_L + 35.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        for m in &self.markers {
            if !(m.x >= x0 && m.x <= x1) {
                continue;
            }
            let x = px(m.x);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{MARGIN_T}" x2="{x:.2}" y2="{}" stroke="black" stroke-dasharray="5,4"/><text x="{:.2}" y="{}">{}</text>"#,
                MARGIN_T + ph,
                x + 4.0,
                MARGIN_T + ph - 6.0,
                escape(&m.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn trip_markers(trace: &RunTrace) -> Vec<Marker> {
    let mut out = Vec::new();
    if let Some(t) = trace.summary.control1_time_s {
        out.push(Marker {
            x: t,
            label: "control 1 trip".into(),
        });
    }
    if let Some(t) = trace.summary.control2_time_s {
        if trace.summary.control1_time_s != Some(t) {
            out.push(Marker {
                x: t,
                label: "control 2 trip".into(),
            });
        }
    }
    out
}

fn series(name: &str, recs: &[SampleRecord], f: impl Fn(&SampleRecord) -> Option<f64>) -> Series {
    Series {
        name: name.into(),
        points: recs
            .iter()
            .map(|r| (r.t, f(r).unwrap_or(f64::NAN)))
            .collect(),
    }
}

/// The standard plots of a run as `(file stem, svg)` pairs.
pub fn trace_plots(trace: &RunTrace) -> Vec<(&'static str, String)> {
    let recs = &trace.records;
    let markers = trip_markers(trace);
    let tan = LinePlot {
        title: "tan δ".into(),
        x_label: "time (s)".into(),
        y_label: "tan δ".into(),
        series: vec![
            series("measured", recs, |r| Some(r.detector.tan_delta)),
            series("true", recs, |r| Some(r.true_tan_delta)),
        ],
        markers: markers.clone(),
    };
    let ma = LinePlot {
        title: "moving average of tan δ".into(),
        x_label: "time (s)".into(),
        y_label: "tan δ (averaged)".into(),
        series: vec![series("average", recs, |r| r.detector.ma)],
        markers: markers.clone(),
    };
    let tc = LinePlot {
        title: "conductor and ambient temperature".into(),
        x_label: "time (s)".into(),
        y_label: "°C".into(),
        series: vec![
            series("conductor", recs, |r| Some(r.t_c)),
            series("ambient", recs, |r| Some(r.t_a)),
        ],
        markers,
    };
    vec![
        ("tan_delta", tan.render_svg()),
        ("moving_average", ma.render_svg()),
        ("temperature", tc.render_svg()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_paths_and_markers() {
        let p = LinePlot {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "s".into(),
                points: (0..10).map(|i| (i as f64, (i * i) as f64)).collect(),
            }],
            markers: vec![Marker {
                x: 4.5,
                label: "trip".into(),
            }],
        };
        let svg = p.render_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("<path d=\"M"));
        assert!(svg.contains("trip"));
    }

    #[test]
    fn empty_plot_says_so() {
        assert!(LinePlot::default().render_svg().contains("no data"));
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(0.5, 5), 0.1);
        assert_eq!(nice_step(30.0, 6), 5.0);
    }
}
