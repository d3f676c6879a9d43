//! Minimal static line charts.
//!
//! Series are drawn inside a group whose transform maps data coordinates
//! onto the plot area, so polyline points are the data values themselves.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct Axis {
    pub label: String,
    pub min: f64,
    pub max: f64,
}

impl Axis {
    pub fn new(label: &str, min: f64, max: f64) -> Self {
        Self {
            label: label.to_string(),
            min,
            max,
        }
    }

    /// Bounds padded by 5% of the range around `values`.
    pub fn enclosing(label: &str, values: impl IntoIterator<Item = f64>) -> Self {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if !lo.is_finite() {
            return Self::new(label, 0.0, 1.0);
        }
        let pad = if hi > lo {
            0.05 * (hi - lo)
        } else {
            0.5f64.max(0.1 * lo.abs())
        };
        Self::new(label, lo - pad, hi + pad)
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64, span: f64) -> String {
    let digits = if span >= 50.0 {
        0
    } else if span >= 5.0 {
        1
    } else if span >= 0.5 {
        2
    } else {
        4
    };
    format!("{v:.digits$}")
}

pub fn line_chart(title: &str, x: &Axis, y: &Axis, series: &[Series]) -> String {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + (v - x.min) / x.span() * pw;
    let py = |v: f64| TOP + ph - (v - y.min) / y.span() * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x.min + f * x.span();
        let yv = y.min + f * y.span();
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#ddd"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"##,
            px(xv),
            TOP,
            TOP + ph,
            TOP + ph + 16.0,
            tick_label(xv, x.span())
        );
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#ddd"/><text x="{3}" y="{4}" text-anchor="end">{5}</text>"##,
            LEFT,
            py(yv),
            LEFT + pw,
            LEFT - 6.0,
            py(yv) + 4.0,
            tick_label(yv, y.span())
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&x.label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&y.label)
    );
    let _ = writeln!(
        s,
        r#"<g class="plot" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" transform="translate({LEFT} {}) scale({} {}) translate({} {})">"#,
        x.min,
        x.max,
        y.min,
        y.max,
        TOP + ph,
        pw / x.span(),
        -ph / y.span(),
        -x.min,
        -y.min
    );
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser.points.iter().map(|(a, b)| format!("{a},{b}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" points="{}" fill="none" stroke="{}" stroke-width="2" vector-effect="non-scaling-stroke"/>"#,
            escape(&ser.name),
            pts.join(" "),
            COLORS[i % COLORS.len()]
        );
    }
    let _ = writeln!(s, "</g>");
    for (i, ser) in series.iter().enumerate() {
        if let [(a, b)] = ser.points[..] {
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="3.5" fill="{}"/>"#,
                px(a),
                py(b),
                COLORS[i % COLORS.len()]
            );
        }
    }
    if series.len() > 1 {
        for (i, ser) in series.iter().enumerate() {
            let ly = TOP + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="12" height="3" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                LEFT + pw - 150.0,
                ly - 4.0,
                COLORS[i % COLORS.len()],
                LEFT + pw - 132.0,
                ly,
                escape(&ser.name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
