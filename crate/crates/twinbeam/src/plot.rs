//! Minimal self-contained SVG emission for spectra, JSI heatmaps and
//! power-sweep curves. Output bytes are deterministic for fixed input:
//! every float is formatted with a fixed precision and nothing depends on
//! ambient state.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::jsa::JsaGrid;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 56.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        MARGIN_LEFT + (v - self.x_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::MIN_POSITIVE);
        HEIGHT - MARGIN_BOTTOM - (v - self.y_min) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        out,
        r#"<path d="M {x0:.1} {y1:.1} L {x0:.1} {y0:.1} L {x1:.1} {y0:.1}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for k in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * k as f64 / 4.0;
        let px = frame.x(fx);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black" stroke-width="1"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            format_tick(fx)
        );
        let fy = frame.y_min + (frame.y_max - frame.y_min) * k as f64 / 4.0;
        let py = frame.y(fy);
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black" stroke-width="1"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            py + 4.0,
            format_tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    );
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            min = min.min(v);
            max = max.max(v);
        }
    }
    if min > max {
        return None;
    }
    if min == max {
        min -= 0.5;
        max += 0.5;
    }
    Some((min, max))
}

/// Line plot of one (x, y) series. An empty series renders the axes only.
pub fn series_svg(
    points: &[(f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
    with_markers: bool,
) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let (x_min, x_max) = bounds(points.iter().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let (y_min, y_max) = bounds(points.iter().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let frame = Frame {
        x_min,
        x_max,
        y_min: y_min.min(0.0_f64.max(y_min)),
        y_max,
    };
    axes(&mut out, &frame, x_label, y_label);
    if !points.is_empty() {
        let path: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                format!(
                    "{} {:.2} {:.2}",
                    if i == 0 { "M" } else { "L" },
                    frame.x(x),
                    frame.y(y)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
            path.join(" ")
        );
        if with_markers {
            for &(x, y) in points {
                let _ = writeln!(
                    out,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
                    frame.x(x),
                    frame.y(y)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Wavelength spectrum (weights against nm).
pub fn spectrum_svg(wavelengths_nm: &[f64], weights: &[f64], title: &str) -> String {
    let points: Vec<(f64, f64)> = wavelengths_nm
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .collect();
    series_svg(&points, title, "wavelength (nm)", "intensity", false)
}

/// Sweep curve with markers (e.g. g² against pump power).
pub fn sweep_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    series_svg(points, title, x_label, y_label, true)
}

/// Five-stop sequential colormap (dark blue → yellow).
fn colormap(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] = [
        (0.267, 0.005, 0.329),
        (0.229, 0.322, 0.546),
        (0.128, 0.567, 0.551),
        (0.369, 0.789, 0.383),
        (0.993, 0.906, 0.144),
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let lerp = |a: f64, b: f64| a + (b - a) * f;
    (
        (lerp(STOPS[i].0, STOPS[i + 1].0) * 255.0).round() as u8,
        (lerp(STOPS[i].1, STOPS[i + 1].1) * 255.0).round() as u8,
        (lerp(STOPS[i].2, STOPS[i + 1].2) * 255.0).round() as u8,
    )
}

/// Heatmap of an intensity grid with wavelength axes in nm.
pub fn heatmap_svg(grid: &JsaGrid, title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let s_axis = grid.signal_axis();
    let i_axis = grid.idler_axis();
    let frame = Frame {
        x_min: i_axis[0],
        x_max: *i_axis.last().unwrap(),
        y_min: s_axis[0],
        y_max: *s_axis.last().unwrap(),
    };
    let peak = grid
        .values()
        .iter()
        .cloned()
        .fold(f64::MIN_POSITIVE, f64::max);
    let cell_w = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / i_axis.len() as f64;
    let cell_h = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) / s_axis.len() as f64;
    for (row, &lambda_s) in s_axis.iter().enumerate() {
        for (col, &lambda_i) in i_axis.iter().enumerate() {
            let value = grid.values()[(row, col)] / peak;
            if value <= 0.0 {
                continue;
            }
            let (r, g, b) = colormap(value);
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
                frame.x(lambda_i) - cell_w / 2.0,
                frame.y(lambda_s) - cell_h / 2.0,
                cell_w + 0.1,
                cell_h + 0.1,
            );
        }
    }
    axes(&mut out, &frame, "idler wavelength (nm)", "signal wavelength (nm)");
    out.push_str("</svg>\n");
    out
}

pub fn save_svg(content: &str, path: &Path) -> io::Result<()> {
    fs::write(path, content)
}
