//! Minimal static SVG charts: scatter plots coloured by a scalar and
//! multi-series line plots.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Anchors of a perceptually ordered dark-blue to yellow ramp.
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

const LINE_COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Colour of `t` in `[0, 1]` on the ramp.
pub fn colormap(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |u: f64, v: f64| (u + f * (v - u)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Frame {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in points.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            f.x0 = f.x0.min(p[0]);
            f.x1 = f.x1.max(p[0]);
            f.y0 = f.y0.min(p[1]);
            f.y1 = f.y1.max(p[1]);
        }
        if !f.x0.is_finite() {
            (f.x0, f.x1, f.y0, f.y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if f.x1 == f.x0 {
            f.x1 += 0.5;
            f.x0 -= 0.5;
        }
        if f.y1 == f.y0 {
            f.y1 += 0.5;
            f.y0 -= 0.5;
        }
        f
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for (v, x) in [(f.x0, left), (f.x1, right)] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            bottom + 16.0
        );
    }
    for (v, y) in [(f.y0, bottom), (f.y1, top)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            left - 6.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

/// Scatter plot; each point is coloured by its `values` entry, normalised
/// over the range of `values`.
pub fn scatter_svg(points: &[[f64; 2]], values: &[f64], title: &str, xlabel: &str, ylabel: &str) -> String {
    let f = Frame::fit(points.iter());
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &f);
    for (i, p) in points.iter().enumerate() {
        let t = values.get(i).map_or(0.0, |v| (v - lo) / span);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
            f.sx(p[0]),
            f.sy(p[1]),
            colormap(t)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Line plot of named series with a legend.
pub fn line_svg(series: &[(&str, Vec<[f64; 2]>)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let f = Frame::fit(series.iter().flat_map(|(_, pts)| pts.iter()));
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &f);
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = LINE_COLOURS[k % LINE_COLOURS.len()];
        let mut d = String::new();
        for (i, p) in pts.iter().filter(|p| p[0].is_finite() && p[1].is_finite()).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, f.sx(p[0]), f.sy(p[1]));
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" stroke="{colour}" stroke-width="1.5" fill="none"/>"#,
            d.trim_end()
        );
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12" fill="{colour}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
