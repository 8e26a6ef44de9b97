//! Minimal SVG heatmaps: one rectangle per grid cell.

use std::fmt::Write;

const CELL: usize = 10;

/// Linear blue-to-red map of `t` in [0, 1].
fn color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.6).round() as u8;
    (r, g, b)
}

/// Heatmap of a row-major `nx`-wide grid. Row 0 is drawn at the bottom so
/// the picture has the usual axis orientation.
pub fn heatmap(values: &[f64], nx: usize, title: &str) -> String {
    let ny = values.len() / nx.max(1);
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (nx * CELL, ny * CELL);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" viewBox="0 0 {w} {}">"#, h + 40, h + 40);
    let _ = writeln!(s, r#"<text x="2" y="14" font-size="12">{title}</text>"#);
    for j in 0..ny {
        for i in 0..nx {
            let (r, g, b) = color((values[j * nx + i] - lo) / span);
            let y = 20 + (ny - 1 - j) * CELL;
            let _ = writeln!(s, r#"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})"/>"#, i * CELL);
        }
    }
    let _ = writeln!(s, r#"<text x="2" y="{}" font-size="12">min {lo:.4e}  max {hi:.4e}</text>"#, h + 36);
    s.push_str("</svg>\n");
    s
}
