//! Tiny SVG 1.1 writers for meshes, fields and x/y plots.

use std::fmt::Write as _;

use crate::mesh::{CellKey, QuadMesh};

/// Fill colour for an element at `depth`: light for coarse, dark for fine.
pub fn depth_color(depth: u32, depth_max: u32) -> String {
    let t = if depth_max == 0 {
        0.0
    } else {
        f64::from(depth) / f64::from(depth_max)
    };
    let v = (235.0 - 150.0 * t).round() as u8;
    format!("rgb({v},{v},{})", 255u8.saturating_sub((60.0 * t) as u8))
}

/// Blue-to-red ramp for `t ∈ [0, 1]`.
pub fn heat_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    format!("rgb({r},{g},{b})")
}

/// Draws every element with the given fill. The y axis points up.
pub fn mesh_svg(mesh: &QuadMesh, pixels: f64, fill: impl Fn(CellKey) -> String) -> String {
    let [sx, sy] = mesh.extent();
    let scale = pixels / sx.max(sy);
    let (w, h) = (sx * scale, sy * scale);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.3} {h:.3}">"#
    );
    for (_, key) in mesh.iter() {
        let (lo, size) = mesh.bounds(key);
        let x = lo[0] * scale;
        let y = h - (lo[1] + size[1]) * scale;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="{}" stroke="black" stroke-width="0.5"/>"#,
            size[0] * scale,
            size[1] * scale,
            fill(key)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Polyline plot of several named series on log-y axes when `log_y`.
pub fn line_plot(series: &[(String, Vec<(f64, f64)>)], log_y: bool, width: f64, height: f64) -> String {
    let tf = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let pts = series.iter().flat_map(|(_, s)| s.iter().map(|&(x, y)| (x, tf(y))));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let margin = 40.0;
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (width - 2.0 * margin);
    let py = |y: f64| height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        width - 2.0 * margin,
        height - 2.0 * margin
    );
    for (i, (name, s)) in series.iter().enumerate() {
        let color = heat_color(if series.len() > 1 { i as f64 / (series.len() - 1) as f64 } else { 0.0 });
        let path: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(tf(y)))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
            width - margin + 4.0 - 120.0,
            margin + 14.0 * (i + 1) as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
