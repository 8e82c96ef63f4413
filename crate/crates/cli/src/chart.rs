//! Minimal SVG line charts.
//!
//! Output contract: one `<svg>` document per chart with a title, an x axis
//! labeled with the x column name, a y axis labeled with the family unit,
//! five ticks per axis, and one `<polyline>` plus legend entry per series,
//! each carrying `data-series="<column>"`.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// A metric family: chart name, y-axis unit, member columns.
pub struct Family {
    pub name: &'static str,
    pub unit: &'static str,
    pub columns: &'static [&'static str],
}

pub const FAMILIES: &[Family] = &[
    Family {
        name: "activity",
        unit: "subjects per step",
        columns: &["applications", "denials", "explanations_issued", "implementations"],
    },
    Family {
        name: "resolutions",
        unit: "commitments per step",
        columns: &["resolutions", "honored", "broken", "void", "expirations"],
    },
    Family {
        name: "events",
        unit: "events per step",
        columns: &["uce_count", "paradigmatic_count"],
    },
    Family {
        name: "honoring",
        unit: "running honoring rate",
        columns: &["honoring_rate_running"],
    },
    Family {
        name: "override_cost",
        unit: "cumulative cost units",
        columns: &["override_cost_running"],
    },
    Family {
        name: "accuracy",
        unit: "agreement with ground truth",
        columns: &["model_accuracy_vs_ground_truth"],
    },
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step of 1, 2 or 5 times a power of ten giving about `target` intervals.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r <= 1.0 {
        1.0
    } else if r <= 2.0 {
        2.0
    } else if r <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    lo = lo.min(0.0);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let step = nice_step(hi - lo, 5.0);
    ((lo / step).floor() * step, (hi / step).ceil() * step)
}

fn label(v: f64) -> String {
    if v == v.round() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let (x0, x1) = axis_range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (y0, y1) = axis_range(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<g stroke="black"><line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{0}"/></g>"#,
            TOP + ph,
            LEFT + pw
        );
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{0}" x2="{px:.2}" y2="{1}" stroke="black"/><text x="{px:.2}" y="{2}" text-anchor="middle">{3}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0,
                label(xv)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{0}" y1="{py:.2}" x2="{1}" y2="{py:.2}" stroke="#dddddd"/><text x="{2}" y="{3:.2}" text-anchor="end">{4}</text>"##,
                LEFT,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0,
                label(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            let name = escape(&series.name);
            let _ = writeln!(
                s,
                r#"<polyline data-series="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 15.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
