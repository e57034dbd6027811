//! Plain-file outputs: binary PGM images and CSV matrices.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Encodes an `h × w` image as binary 8-bit PGM, mapping `[0, max]` to
/// `[0, 255]` (`max` is the image maximum, or 1 for an all-zero image).
pub fn pgm_bytes(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::shape(
            "pgm_bytes",
            format!("{} values for a {height}x{width} image", values.len()),
        ));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 255.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|v| (v.max(0.0) * scale).round().min(255.0) as u8),
    );
    Ok(out)
}

pub fn write_pgm(path: &Path, values: &[f64], height: usize, width: usize) -> Result<()> {
    std::fs::write(path, pgm_bytes(values, height, width)?).map_err(|e| Error::io(path, e))
}

/// Comma-separated rows of an `h × w` matrix.
pub fn matrix_csv(values: &[f64], height: usize, width: usize) -> Result<String> {
    if values.len() != height * width {
        return Err(Error::shape("matrix_csv", "size mismatch"));
    }
    let mut out = String::new();
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a String");
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
