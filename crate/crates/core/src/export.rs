//! Matrix exports: comma-separated text and 8-bit PGM (P5) images.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// One row per line, entries with 9 significant digits.
pub fn write_matrix_text<W: Write>(m: &Array2<f64>, mut w: W) -> std::io::Result<()> {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_matrix_text(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix_text(m, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Binary PGM with pixel `round(255 · entry / scale)`, clamped to `[0, 255]`.
/// Pass `scale = 1` for normalized matrices.
pub fn pgm_bytes(m: &Array2<f64>, scale: f64) -> Vec<u8> {
    let (h, w) = m.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let s = if scale > 0.0 { scale } else { 1.0 };
    out.extend(m.iter().map(|&v| (255.0 * (v / s).clamp(0.0, 1.0)).round() as u8));
    out
}

pub fn save_pgm(m: &Array2<f64>, scale: f64, path: &Path) -> Result<()> {
    fs::write(path, pgm_bytes(m, scale)).map_err(|e| Error::io(path, e))
}

/// One index per line.
pub fn save_permutation(perm: &[usize], path: &Path) -> Result<()> {
    let text: String = perm.iter().map(|p| format!("{p}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pgm_layout() {
        let m = array![[0.0, 0.5, 1.0], [1.0, 0.25, 2.0]];
        let bytes = pgm_bytes(&m, 1.0);
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 255, 64, 255]);
        assert_eq!(pgm_bytes(&m, 2.0)[header.len() + 5], 255);
    }

    #[test]
    fn text_has_nine_digits() {
        let mut buf = Vec::new();
        write_matrix_text(&array![[1.0 / 3.0, 0.0]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3.33333333e-1,0.00000000e0\n");
    }
}
