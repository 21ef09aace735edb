//! Minimal SVG line and bar charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// `(x, y, half-width of error bar)`.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            it.filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (mut x0, mut x1) = span(&mut xs.clone());
        let (mut y0, mut y1) = span(&mut ys.clone());
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 0.05, y1 + 0.05);
        }
        let pad = (y1 - y0) * 0.05;
        Frame {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        (W - RIGHT + LEFT) / 2.0,
        escape(title),
        (W - RIGHT + LEFT) / 2.0,
        H - 12.0,
        escape(x_label),
        (H - BOTTOM + TOP) / 2.0,
        (H - BOTTOM + TOP) / 2.0,
        escape(y_label),
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[(f64, String)]) {
    let _ = writeln!(
        out,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    for i in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" x2="{}" y1="{py:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{y:.3}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            f.py(y) + 4.0,
            py = f.py(y),
        );
    }
    for (x, label) in x_ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            f.px(*x),
            H - BOTTOM + 16.0,
            escape(label)
        );
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 12.0,
            y - 10.0,
            COLORS[i % COLORS.len()],
            W - RIGHT + 30.0,
            y,
            escape(name)
        );
    }
}

/// Lines with optional error bars. `x_ticks` overrides the numeric x labels.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], x_ticks: Option<Vec<(f64, String)>>) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let f = Frame::new(pts.clone().map(|p| p.0), pts.clone().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let ticks = x_ticks.unwrap_or_else(|| {
        let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() > 12 {
            (0..=5)
                .map(|i| f.x0 + (f.x1 - f.x0) * i as f64 / 5.0)
                .map(|x| (x, format!("{x:.0}")))
                .collect()
        } else {
            xs.into_iter().map(|x| (x, format!("{x}"))).collect()
        }
    });
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    axes(&mut out, &f, &ticks);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for p in s.points.iter().filter(|p| p.1.is_finite()) {
            let (x, y) = (f.px(p.0), f.py(p.1));
            if p.2 > 0.0 {
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.2}" x2="{x:.2}" y1="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    f.py(p.1 - p.2),
                    f.py(p.1 + p.2)
                );
            }
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One bar per `(label, value, error)`.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64, f64)]) -> String {
    let f = Frame::new(
        (0..bars.len()).map(|i| i as f64).chain([-0.5, bars.len() as f64 - 0.5]),
        bars.iter().flat_map(|b| [0.0, b.1 + b.2]),
    );
    let ticks: Vec<(f64, String)> = bars.iter().enumerate().map(|(i, b)| (i as f64, b.0.clone())).collect();
    let mut out = String::new();
    header(&mut out, title, "", y_label);
    axes(&mut out, &f, &ticks);
    let width = (f.px(1.0) - f.px(0.0)) * 0.6;
    for (i, (_, v, e)) in bars.iter().enumerate() {
        let x = f.px(i as f64);
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{width:.2}" height="{:.2}" fill="{color}"/>"#,
            x - width / 2.0,
            f.py(*v),
            (f.py(0.0) - f.py(*v)).max(0.0)
        );
        if *e > 0.0 {
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" x2="{x:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
                f.py(v - e),
                f.py(v + e)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
