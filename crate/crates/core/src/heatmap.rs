//! Binary PGM (P5) rendering of a demand grid.
//!
//! One pixel per cell, row `y` of the grid is image row `y` (top row is
//! `y = 0`). Values are min-max scaled to 0..=255; a constant field maps to
//! 128.

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const FLAT_GRAY: u8 = 128;

pub fn pgm_header(grid: GridSpec) -> String {
    format!("P5\n{} {}\n255\n", grid.width(), grid.height())
}

/// Renders `values` (row-major) and overlays a 3x3 plus at each mark.
pub fn render_pgm(grid: GridSpec, values: &[f64], marks: &[(f64, f64)]) -> Result<Vec<u8>> {
    if values.is_empty() {
        return Err(Error::InvalidGrid("cannot render an empty grid".into()));
    }
    if values.len() != grid.cell_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {}x{} grid",
            values.len(),
            grid.width(),
            grid.height()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("cannot render non-finite value {v}")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pixels: Vec<u8> = if hi > lo {
        values
            .iter()
            .map(|v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
            .collect()
    } else {
        vec![FLAT_GRAY; values.len()]
    };
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    for &(x, y) in marks {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for (dx, dy) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (px, py) = (cx + dx, cy + dy);
            if (0..w).contains(&px) && (0..h).contains(&py) {
                pixels[(py * w + px) as usize] = 255;
            }
        }
    }
    let mut out = pgm_header(grid).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}
