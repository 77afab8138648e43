use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::io::{contact_sheet, write_csv_records, write_pgm};
use crate::data::Dims;
use crate::error::Result;

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// `samples.csv`, plus one PGM per image and a `sheet.pgm` for image data.
pub(crate) fn emit_samples(dir: &Path, samples: &Tensor, dims: Dims) -> Result<()> {
    let n = samples.cols();
    let header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..samples.rows())
        .map(|r| samples.row(r).iter().map(|&v| fmt(v)).collect())
        .collect();
    write_csv_records(&dir.join("samples.csv"), &header, &rows)?;
    if let Dims::Image { height, width } = dims {
        let images: Vec<Vec<f64>> = (0..samples.rows())
            .map(|r| samples.row(r).iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .collect();
        for (k, img) in images.iter().enumerate() {
            write_pgm(&dir.join(format!("img_{k:04}.pgm")), img, height, width)?;
        }
        if !images.is_empty() {
            let cols = (images.len() as f64).sqrt().ceil() as usize;
            let (sheet, h, w) = contact_sheet(&images, height, width, cols, 1, 0.5)?;
            write_pgm(&dir.join("sheet.pgm"), &sheet, h, w)?;
        }
    }
    Ok(())
}
