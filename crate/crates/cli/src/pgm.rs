//! Binary PGM (P5) export of nonnegative matrices.

use std::fs;
use std::path::Path;

use tdn_core::{Matrix, Result};

/// Write `m` as a grayscale P5 image: width = cols, height = rows,
/// maxval 255, pixel = round(255 * v / max). An all-zero matrix maps to
/// black.
pub fn write_pgm(path: &Path, m: &Matrix) -> Result<()> {
    let max = m.data().iter().fold(0.0f64, |a, &v| a.max(v));
    let mut out = Vec::with_capacity(32 + m.data().len());
    out.extend_from_slice(format!("P5\n{} {}\n255\n", m.cols(), m.rows()).as_bytes());
    for &v in m.data() {
        let pixel = if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 };
        out.push(pixel);
    }
    fs::write(path, out)?;
    Ok(())
}
