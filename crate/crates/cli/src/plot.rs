//! Deterministic SVG rendering of learning curves and guidance quivers.
//!
//! Coordinates are printed with two decimals and every collection is
//! iterated in a fixed order, so equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ircr_core::envs::gridworld::{DOWN, LEFT, RIGHT, UP};
use ircr_core::tabular::{read_quiver_csv, QuiverCell};

use crate::error::CliError;
use crate::matrix::{parse_summary_csv, SummaryRow};

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
/// Arrows pointing up or right.
pub const TOWARD_COLOR: &str = "#d62728";
/// Arrows pointing down or left.
pub const AWAY_COLOR: &str = "#1f77b4";

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT_M: f64 = 70.0;
const RIGHT_M: f64 = 170.0;
const TOP_M: f64 = 40.0;
const BOTTOM_M: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if lo > hi {
        return None;
    }
    Some(if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    })
}

/// Variant names in first-appearance order.
fn variants(rows: &[SummaryRow]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for r in rows {
        if !out.contains(&r.variant.as_str()) {
            out.push(&r.variant);
        }
    }
    out
}

/// Mean curves with a shaded mean +- std band per variant. A single seed has
/// zero spread, so its band collapses onto the curve; no rows give empty axes.
pub fn curves_svg(rows: &[SummaryRow], title: &str, x_label: &str, y_label: &str) -> String {
    let (x0, x1) = range(rows.iter().map(|r| r.x)).unwrap_or((0.0, 1.0));
    let (y0, y1) =
        range(rows.iter().flat_map(|r| [r.mean - r.std, r.mean + r.std])).unwrap_or((0.0, 1.0));
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT_M - RIGHT_M;
    let ph = H - TOP_M - BOTTOM_M;
    let sx = |x: f64| LEFT_M + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP_M + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT_M + pw / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r##"<rect x="{LEFT_M}" y="{TOP_M}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP_M + ph,
            TOP_M + ph + 5.0,
            TOP_M + ph + 18.0,
            tick_label(xv)
        )
        .unwrap();
        writeln!(
            s,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT_M}" y2="{py:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT_M - 5.0,
            LEFT_M - 8.0,
            py + 4.0,
            tick_label(yv)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT_M + pw / 2.0,
        H - 12.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP_M + ph / 2.0,
        TOP_M + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    if rows.is_empty() {
        writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="#777">no data</text>"##,
            LEFT_M + pw / 2.0,
            TOP_M + ph / 2.0
        )
        .unwrap();
    }

    for (k, name) in variants(rows).into_iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<&SummaryRow> = rows.iter().filter(|r| r.variant == name).collect();
        let mut band = String::new();
        for r in &pts {
            write!(band, "{:.2},{:.2} ", sx(r.x), sy(r.mean + r.std)).unwrap();
        }
        for r in pts.iter().rev() {
            write!(band, "{:.2},{:.2} ", sx(r.x), sy(r.mean - r.std)).unwrap();
        }
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.x), sy(r.mean)))
            .collect();
        writeln!(
            s,
            r#"<g class="variant" data-variant="{}"><polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/><polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/></g>"#,
            escape(name),
            band.trim_end(),
            line.join(" ")
        )
        .unwrap();
        let ly = TOP_M + 10.0 + 20.0 * k as f64;
        let lx = W - RIGHT_M + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// One quiver arrow in grid units; `dy > 0` points up.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrow {
    pub x: usize,
    pub y: usize,
    pub action: usize,
    pub dx: f64,
    pub dy: f64,
    /// Magnitude relative to the largest one, in `(0, 1]`.
    pub scale: f64,
    pub color: &'static str,
}

/// Arrows for every cell with a preferred action.
pub fn quiver_arrows(cells: &[QuiverCell]) -> Vec<Arrow> {
    let top = cells.iter().map(|c| c.magnitude).fold(0.0, f64::max);
    cells
        .iter()
        .filter_map(|c| {
            let action = c.action?;
            let (dx, dy, color) = match action {
                UP => (0.0, 1.0, TOWARD_COLOR),
                RIGHT => (1.0, 0.0, TOWARD_COLOR),
                DOWN => (0.0, -1.0, AWAY_COLOR),
                LEFT => (-1.0, 0.0, AWAY_COLOR),
                _ => return None,
            };
            let scale = if top > 0.0 { c.magnitude / top } else { 0.0 };
            Some(Arrow {
                x: c.x,
                y: c.y,
                action,
                dx,
                dy,
                scale,
                color,
            })
        })
        .collect()
}

pub fn quiver_svg(cells: &[QuiverCell], title: &str) -> String {
    const CELL: f64 = 12.0;
    let width = cells.iter().map(|c| c.x + 1).max().unwrap_or(0);
    let height = cells.iter().map(|c| c.y + 1).max().unwrap_or(0);
    let (gw, gh) = (width as f64 * CELL, height as f64 * CELL);
    let (sw, sh) = ((gw + 20.0).max(360.0), gh + 50.0);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{sw:.2}" height="{sh:.2}" viewBox="0 0 {sw:.2} {sh:.2}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    s.push_str("<defs>");
    for (id, color) in [("toward", TOWARD_COLOR), ("away", AWAY_COLOR)] {
        write!(
            s,
            r#"<marker id="head-{id}" viewBox="0 0 10 10" refX="8" refY="5" markerWidth="4" markerHeight="4" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{color}"/></marker>"#
        )
        .unwrap();
    }
    s.push_str("</defs>\n");
    writeln!(
        s,
        r#"<rect width="{sw:.2}" height="{sh:.2}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="10" y="20" font-size="14">{}</text>"#,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r##"<rect x="10" y="35" width="{gw:.2}" height="{gh:.2}" fill="none" stroke="#999"/>"##
    )
    .unwrap();
    for a in quiver_arrows(cells) {
        // SVG y grows downward; grid row 0 is at the bottom
        let cx = 10.0 + (a.x as f64 + 0.5) * CELL;
        let cy = 35.0 + (height as f64 - a.y as f64 - 0.5) * CELL;
        let len = 0.45 * CELL * a.scale.max(0.2);
        let id = if a.color == TOWARD_COLOR {
            "toward"
        } else {
            "away"
        };
        writeln!(
            s,
            r#"<line class="arrow" data-x="{}" data-y="{}" data-action="{}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1.5" marker-end="url(#head-{id})"/>"#,
            a.x,
            a.y,
            a.action,
            cx - a.dx * len,
            cy + a.dy * len,
            cx + a.dx * len,
            cy - a.dy * len,
            a.color
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Renders `plots/curves.svg` from `summary.csv` and one quiver SVG per
/// quiver CSV found under `cells/`. Returns the written files in order.
pub fn emit_plots(run_dir: &Path, title: &str) -> Result<Vec<PathBuf>, CliError> {
    let plots = run_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|source| CliError::Io {
        path: plots.clone(),
        source,
    })?;
    let mut written = Vec::new();
    let summary = parse_summary_csv(&read(&run_dir.join("summary.csv"))?)?;
    let curves = plots.join("curves.svg");
    write(
        &curves,
        &curves_svg(&summary, title, "training progress", "environmental metric"),
    )?;
    written.push(curves);

    let cells_dir = run_dir.join("cells");
    if cells_dir.is_dir() {
        for variant_dir in sorted_entries(&cells_dir)?
            .into_iter()
            .filter(|p| p.is_dir())
        {
            let variant = variant_dir
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            for file in sorted_entries(&variant_dir)? {
                let name = file
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                let Some(stem) = name
                    .strip_prefix("quiver-")
                    .and_then(|n| n.strip_suffix(".csv"))
                else {
                    continue;
                };
                let cells = read_quiver_csv(&read(&file)?)?;
                let target = plots.join(format!("{variant}-quiver-{stem}.svg"));
                write(
                    &target,
                    &quiver_svg(&cells, &format!("{variant} {stem}: argmax guidance reward")),
                )?;
                written.push(target);
            }
        }
    }
    Ok(written)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_labels_are_trimmed() {
        assert_eq!(tick_label(2.5), "2.5");
        assert_eq!(tick_label(-0.0001), "0");
        assert_eq!(tick_label(10.0), "10");
    }

    #[test]
    fn arrow_colors_follow_direction() {
        let cells: Vec<QuiverCell> = [UP, RIGHT, DOWN, LEFT]
            .iter()
            .enumerate()
            .map(|(i, &a)| QuiverCell {
                x: i,
                y: 0,
                action: Some(a),
                magnitude: 0.5,
            })
            .collect();
        let colors: Vec<&str> = quiver_arrows(&cells).iter().map(|a| a.color).collect();
        assert_eq!(colors, [TOWARD_COLOR, TOWARD_COLOR, AWAY_COLOR, AWAY_COLOR]);
    }

    #[test]
    fn empty_cells_have_no_arrow() {
        let cells = [QuiverCell {
            x: 0,
            y: 0,
            action: None,
            magnitude: 0.0,
        }];
        assert!(quiver_arrows(&cells).is_empty());
        assert!(!quiver_svg(&cells, "t").contains("class=\"arrow\""));
    }
}
