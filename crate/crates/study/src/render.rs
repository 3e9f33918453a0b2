//! SVG quiver plot of a wind field.

use std::fmt::Write as _;

use stormloc::grid::cell_index;
use stormloc::{GeoPoint, WindField};

/// Pixels per grid box.
const CELL: f64 = 14.0;
const MARGIN: f64 = 10.0;
pub const LABEL_ORANGE: &str = "#ff7f0e";
const DARK_BLUE: (f64, f64, f64) = (8.0, 48.0, 107.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkerStyle {
    /// Upright `+`, neutral colour.
    Plus,
    /// Diagonal `x`, neutral colour.
    Saltire,
    /// Orange `x` for the track label in unblinded plots.
    Label,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marker {
    pub point: GeoPoint,
    pub style: MarkerStyle,
}

/// Linear white to dark-blue ramp for `t` in [0, 1].
pub fn colormap(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |dark: f64| (255.0 + (dark - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(DARK_BLUE.0), mix(DARK_BLUE.1), mix(DARK_BLUE.2))
}

/// One arrow per grid box with length proportional to wind speed (the
/// fastest box spans 0.9 of a box), optional probability shading underneath
/// and crosses for the markers. Output bytes depend only on the inputs.
pub fn render_quiver(field: &WindField, markers: &[Marker], prob: Option<&[f64]>) -> String {
    let g = field.grid;
    let (h, w) = (g.height, g.width);
    let width = w as f64 * CELL + 2.0 * MARGIN;
    let height = h as f64 * CELL + 2.0 * MARGIN;
    // Screen position of the center of (row, col); north is up.
    let cx = |col: f64| MARGIN + (col + 0.5) * CELL;
    let cy = |row: f64| MARGIN + (h as f64 - row - 0.5) * CELL;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);

    if let Some(p) = prob {
        let top = p.iter().cloned().fold(0.0, f64::max);
        let _ = writeln!(s, r#"<g class="prob">"#);
        for (flat, &v) in p.iter().enumerate().take(h * w) {
            let (row, col) = ((flat / w) as f64, (flat % w) as f64);
            let t = if top > 0.0 { v / top } else { 0.0 };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{CELL}" height="{CELL}" fill="{}"/>"#,
                cx(col) - CELL / 2.0,
                cy(row) - CELL / 2.0,
                colormap(t)
            );
        }
        s.push_str("</g>\n");
    }

    let vmax = (0..h * w).map(|i| field.speed(i)).fold(0.0, f64::max);
    let scale = if vmax > 0.0 { 0.9 * CELL / vmax } else { 0.0 };
    let _ = writeln!(s, r##"<g stroke="#333333" stroke-width="1" fill="none">"##);
    for flat in 0..h * w {
        let (row, col) = ((flat / w) as f64, (flat % w) as f64);
        let (dx, dy) = (field.u[flat] * scale, -field.v[flat] * scale);
        let (x0, y0) = (cx(col) - dx / 2.0, cy(row) - dy / 2.0);
        let (x1, y1) = (x0 + dx, y0 + dy);
        let mut d = format!("M{x0:.2} {y0:.2}L{x1:.2} {y1:.2}");
        let len = dx.hypot(dy);
        if len > 0.0 {
            // Two barbs at +-25 degrees, a third of the shaft long.
            let (ux, uy) = (dx / len, dy / len);
            let barb = len / 3.0;
            let (c, sn) = (25f64.to_radians().cos(), 25f64.to_radians().sin());
            for sign in [1.0, -1.0] {
                let bx = -(ux * c - sign * uy * sn) * barb;
                let by = -(uy * c + sign * ux * sn) * barb;
                let _ = write!(d, "M{x1:.2} {y1:.2}l{bx:.2} {by:.2}");
            }
        }
        let _ = writeln!(s, r#"<path class="arrow" d="{d}"/>"#);
    }
    s.push_str("</g>\n");

    for m in markers {
        // Markers sit on box centers; points off the grid are not drawn.
        let Ok(c) = cell_index(m.point, &g) else { continue };
        let (x, y) = (cx(c.col as f64), cy(c.row as f64));
        let r = CELL * 0.6;
        let (class, colour, diagonal) = match m.style {
            MarkerStyle::Plus => ("marker plus", "#000000", false),
            MarkerStyle::Saltire => ("marker saltire", "#000000", true),
            MarkerStyle::Label => ("marker label", LABEL_ORANGE, true),
        };
        let d = if diagonal {
            format!("M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}", x - r, y - r, x + r, y + r, x - r, y + r, x + r, y - r)
        } else {
            format!("M{:.2} {y:.2}L{:.2} {y:.2}M{x:.2} {:.2}L{x:.2} {:.2}", x - r, x + r, y - r, y + r)
        };
        let _ = writeln!(s, r#"<path class="{class}" d="{d}" stroke="{colour}" stroke-width="2.5" fill="none"/>"#);
    }
    s.push_str("</svg>\n");
    s
}
