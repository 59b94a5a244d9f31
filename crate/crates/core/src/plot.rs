//! Static SVG plot emission with companion CSV data tables.
//!
//! Every emitted file embeds the producing run's config hash (an SVG comment
//! / a CSV header comment) so artifacts stay traceable.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (mut y0, mut y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if (x1 - x0).abs() < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (y1 - y0).abs() < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    (x0, x1, y0, y1)
}

/// Line-and-marker chart. Single-point series still render (as markers).
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidConfig(vec!["nothing to plot".into()]));
    }
    let (x0, x1, y0, y1) = bounds(series);
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (W - MARGIN_L - MARGIN_R);
    let py = |y: f64| H - MARGIN_B - (y - y0) / (y1 - y0) * (H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, "<!-- config_hash: {config_hash} -->");
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" font-size="16" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        W / 2.0,
        title
    );

    // axes
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MARGIN_B,
        W - MARGIN_R,
        H - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}" stroke="black"/>"#,
        H - MARGIN_B
    );
    // ticks
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{:.3}</text>"#,
            px(xv),
            H - MARGIN_B + 18.0,
            xv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end" font-family="sans-serif">{:.3}</text>"#,
            MARGIN_L - 6.0,
            py(yv) + 4.0,
            yv
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#dddddd"/>"##,
            MARGIN_L,
            py(yv),
            W - MARGIN_R,
            py(yv)
        );
    }
    // axis labels
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        W / 2.0,
        H - 16.0,
        x_label
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" font-size="13" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        y_label
    );

    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut sorted = s.points.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if sorted.len() > 1 {
            let path_d: Vec<String> = sorted
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, px(x), py(y))
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                path_d.join(" ")
            );
        }
        for &(x, y) in &sorted {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        // legend
        let ly = MARGIN_T + 16.0 * si as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#,
            W - MARGIN_R - 150.0,
            ly
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">{}</text>"#,
            W - MARGIN_R - 135.0,
            ly + 9.0,
            s.label
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))?;

    // companion data table
    let csv_path = path.with_extension("csv");
    let mut csv = format!("# config_hash: {config_hash}\nseries,x,y\n");
    for s in series {
        for &(x, y) in &s.points {
            let _ = writeln!(csv, "{},{x},{y}", s.label);
        }
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))
}

/// A labeled grid of values rendered as an SVG table (used for the
/// per-factor invariance summary).
pub fn table_svg(
    title: &str,
    headers: &[String],
    rows: &[Vec<String>],
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    let cell_w = 130.0;
    let cell_h = 26.0;
    let width = cell_w * headers.len() as f64 + 20.0;
    let height = cell_h * (rows.len() + 1) as f64 + 60.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, "<!-- config_hash: {config_hash} -->");
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>"#,
        width / 2.0,
        title
    );
    let draw_row = |svg: &mut String, cells: &[String], row: usize, bold: bool| {
        let y = 40.0 + cell_h * row as f64;
        for (c, text) in cells.iter().enumerate() {
            let x = 10.0 + cell_w * c as f64;
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" fill="{}" stroke="#999999"/>"##,
                if bold { "#eef2f7" } else { "white" }
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif"{}>{}</text>"#,
                x + cell_w / 2.0,
                y + 17.0,
                if bold { r#" font-weight="bold""# } else { "" },
                text
            );
        }
    };
    draw_row(&mut svg, headers, 0, true);
    for (i, row) in rows.iter().enumerate() {
        draw_row(&mut svg, row, i + 1, false);
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
