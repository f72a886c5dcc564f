//! Minimal SVG output: nodal fields on a mesh with sensor tracks overlaid,
//! and line charts.

use std::fmt::Write;

use cnwf::mesh::{Point, TriMesh};

const SIZE: f64 = 480.0;
const PAD: f64 = 40.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Viridis-like ramp, `t` in `[0, 1]`.
fn color(t: f64) -> String {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    lo: Point,
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(lo: Point, hi: Point) -> Self {
        let scale = SIZE / (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        Self { lo, scale, height: (hi[1] - lo[1]) * scale }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (PAD + (p[0] - self.lo[0]) * self.scale, PAD + self.height - (p[1] - self.lo[1]) * self.scale)
    }
}

/// Filled triangles colored by the mean nodal value, with polylines (sensor
/// tracks) and markers drawn on top.
pub fn field_svg(mesh: &TriMesh, values: &[f64], tracks: &[Vec<Point>], markers: &[Point], title: &str) -> String {
    let (lo, hi) = mesh.bounds();
    let fr = Frame::new(lo, hi);
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (vmax - vmin).max(1e-300);
    let (w, h) = ((hi[0] - lo[0]) * fr.scale + 2.0 * PAD, fr.height + 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{:.1}" font-family="sans-serif" font-size="14">{}</text>"#, PAD * 0.6, escape(title));
    for t in mesh.triangles() {
        let v = (values[t[0]] + values[t[1]] + values[t[2]]) / 3.0;
        let pts: Vec<String> = t
            .iter()
            .map(|&i| {
                let (x, y) = fr.map(mesh.vertex(i));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let c = color((v - vmin) / span);
        let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" stroke="{c}" stroke-width="0.3"/>"#, pts.join(" "));
    }
    for (i, tr) in tracks.iter().enumerate() {
        let pts: Vec<String> = tr
            .iter()
            .map(|&p| {
                let (x, y) = fr.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="white" stroke-width="1.5"/>"#, pts.join(" "));
        if let Some(&p) = tr.first() {
            let (x, y) = fr.map(p);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="none" stroke="white"/><!-- sensor {i} -->"#);
        }
    }
    for &p in markers {
        let (x, y) = fr.map(p);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#d62728" stroke="white"/>"##);
    }
    let _ = writeln!(s, r#"<text x="{PAD}" y="{:.1}" font-family="sans-serif" font-size="11">min {vmin:.3e}  max {vmax:.3e}</text>"#, h - PAD * 0.3);
    s.push_str("</svg>\n");
    s
}

/// Line chart of named series; `log_y` plots `log10` of positive values.
pub fn line_chart_svg(series: &[(String, Vec<(f64, f64)>)], title: &str, xlabel: &str, ylabel: &str, log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().map(|&(x, y)| (x, tf(y)))).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-300 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-300 {
        y1 = y0 + 1.0;
    }
    let (w, h) = (SIZE * 1.4, SIZE * 0.8);
    let mx = |x: f64| PAD * 1.5 + (x - x0) / (x1 - x0) * (w - 2.5 * PAD);
    let my = |y: f64| h - PAD - (y - y0) / (y1 - y0) * (h - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14">{}</text>"#, PAD * 1.5, PAD * 0.6, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{:.1},{:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        mx(x0),
        my(y1),
        my(y0),
        mx(x1)
    );
    let ylab = if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, w / 2.0, h - 8.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="12" y="{:.1}" font-family="sans-serif" font-size="11" transform="rotate(-90 12 {:.1})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, escape(&ylab));
    for (v, anchor_y) in [(y0, my(y0)), (y1, my(y1))] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{anchor_y:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.3}</text>"#, mx(x0) - 4.0);
    }
    for (v, anchor_x) in [(x0, mx(x0)), (x1, mx(x1))] {
        let _ = writeln!(s, r#"<text x="{anchor_x:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.3}</text>"#, my(y0) + 14.0);
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && tf(*y).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", mx(x), my(tf(y))))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{c}">{}</text>"#, w - PAD * 3.0, PAD + 14.0 * i as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
