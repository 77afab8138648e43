use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Grey level for a value in `[0, 1]`, rounding half up.
pub fn to_byte(v: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
    }
    Ok((v * 255.0 + 0.5).floor() as u8)
}

/// Binary PGM (P5, maxval 255).
pub fn encode_pgm(image: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if image.len() != height * width || image.is_empty() {
        return Err(Error::invalid(format!(
            "{} pixels do not form a {height}x{width} image",
            image.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &v in image {
        out.push(to_byte(v)?);
    }
    Ok(out)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, image: &[f64], height: usize, width: usize) -> Result<()> {
    write_bytes(path, &encode_pgm(image, height, width)?)
}

/// Tiles equally sized images into a grid with `pad` pixels of spacing,
/// filled with `background`.
pub fn contact_sheet(
    images: &[Vec<f64>],
    height: usize,
    width: usize,
    cols: usize,
    pad: usize,
    background: f64,
) -> Result<(Vec<f64>, usize, usize)> {
    if images.is_empty() || cols == 0 {
        return Err(Error::invalid("contact sheet needs at least one image and column"));
    }
    if images.iter().any(|im| im.len() != height * width) {
        return Err(Error::invalid(format!("every image must be {height}x{width}")));
    }
    let rows = images.len().div_ceil(cols);
    let sheet_h = rows * height + (rows + 1) * pad;
    let sheet_w = cols * width + (cols + 1) * pad;
    let mut sheet = vec![background; sheet_h * sheet_w];
    for (k, im) in images.iter().enumerate() {
        let top = pad + (k / cols) * (height + pad);
        let left = pad + (k % cols) * (width + pad);
        for r in 0..height {
            let dst = (top + r) * sheet_w + left;
            sheet[dst..dst + width].copy_from_slice(&im[r * width..(r + 1) * width]);
        }
    }
    Ok((sheet, sheet_h, sheet_w))
}

/// Affine rescale of arbitrary finite values onto `[0, 1]`.
pub fn normalize_unit(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// RFC 4180 CSV from serializable records (header taken from field names).
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    write_bytes(path, &bytes)
}

/// RFC 4180 CSV from a header and string cells.
pub fn write_csv_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(fmt)?;
    for row in rows {
        w.write_record(row).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    write_bytes(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Parses JSON text, reporting failures with the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text)
}
