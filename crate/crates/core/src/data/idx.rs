//! IDX containers: big-endian magic, dimension sizes, then raw `u8` data.

use std::path::Path;

use super::{Dataset, Dims};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

static DIGITS_IMAGES: &[u8] = include_bytes!("../../data/digits8x8-images.idx3-ubyte");
static DIGITS_LABELS: &[u8] = include_bytes!("../../data/digits8x8-labels.idx1-ubyte");

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| {
        Error::Format(format!(
            "truncated {what} at offset {offset}: need 4 bytes, {} available",
            bytes.len().saturating_sub(offset)
        ))
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

/// Returns `(dimension sizes, payload)` after checking magic and length.
fn parse_header<'a>(bytes: &'a [u8], magic: u32, ndim: usize, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_u32(bytes, 0, what)?;
    if found != magic {
        return Err(Error::Format(format!(
            "bad magic in {what} at offset 0: expected 0x{magic:08x}, found 0x{found:08x}"
        )));
    }
    let dims = (0..ndim)
        .map(|k| read_u32(bytes, 4 + 4 * k, what).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let need: usize = dims.iter().product();
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::Format(format!(
            "truncated {what} at offset {}: header promises {need} data bytes, found {have}",
            start + have
        )));
    }
    Ok((dims, &bytes[start..start + need]))
}

/// Decodes in-memory IDX images (and optional labels). Pixels are scaled
/// from bytes to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: Option<&[u8]>, name: &str) -> Result<Dataset> {
    let (dims, payload) = parse_header(images, IMAGES_MAGIC, 3, "image file")?;
    let (count, height, width) = (dims[0], dims[1], dims[2]);
    if height == 0 || width == 0 {
        return Err(Error::Format(format!("image file declares {height}x{width} images")));
    }
    let items = payload
        .chunks_exact(height * width)
        .take(count)
        .map(|px| px.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    let ds = Dataset::new(name, items, Dims::Image { height, width })?;
    match labels {
        None => Ok(ds),
        Some(lb) => {
            let (ldims, lpayload) = parse_header(lb, LABELS_MAGIC, 1, "label file")?;
            if ldims[0] != count {
                return Err(Error::Format(format!(
                    "label file has {} entries but image file has {count}",
                    ldims[0]
                )));
            }
            ds.with_labels(lpayload.to_vec())
        }
    }
}

pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = labels_path
        .map(|p| std::fs::read(p).map_err(|e| Error::io(p, e)))
        .transpose()?;
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    parse_idx(&images, labels.as_deref(), &name).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", images_path.display())),
        other => other,
    })
}

pub fn encode_idx_images(images: &[Vec<u8>], height: usize, width: usize) -> Result<Vec<u8>> {
    if images.iter().any(|im| im.len() != height * width) {
        return Err(Error::invalid(format!("every image must have {height}x{width} pixels")));
    }
    let mut out = Vec::with_capacity(16 + images.len() * height * width);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), height, width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for im in images {
        out.extend_from_slice(im);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// 1797 handwritten digits at 8x8, grey levels in `[0, 1]`, with labels.
pub fn bundled_digits() -> Dataset {
    parse_idx(DIGITS_IMAGES, Some(DIGITS_LABELS), "digits8x8").expect("bundled digits are valid IDX")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_round_trip() {
        let imgs = vec![vec![0u8, 255, 128, 7], vec![1, 2, 3, 4]];
        let bytes = encode_idx_images(&imgs, 2, 2).unwrap();
        let labels = encode_idx_labels(&[3, 9]);
        let ds = parse_idx(&bytes, Some(&labels), "fx").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims(), Dims::Image { height: 2, width: 2 });
        for (item, raw) in ds.items().iter().zip(&imgs) {
            let back: Vec<u8> = item.iter().map(|v| (v * 255.0).round() as u8).collect();
            assert_eq!(&back, raw);
        }
        assert_eq!(ds.labels(), Some(&[3u8, 9][..]));
    }

    #[test]
    fn empty_count_is_empty_dataset() {
        let bytes = encode_idx_images(&[], 28, 28).unwrap();
        assert!(parse_idx(&bytes, None, "e").unwrap().is_empty());
    }

    #[test]
    fn wrong_magic_names_both() {
        let mut bytes = encode_idx_images(&[vec![0; 4]], 2, 2).unwrap();
        bytes[3] = 0x01;
        let msg = parse_idx(&bytes, None, "x").unwrap_err().to_string();
        assert!(msg.contains("expected 0x00000803") && msg.contains("found 0x00000801"), "{msg}");
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_idx_images(&[vec![0; 4], vec![0; 4]], 2, 2).unwrap();
        let msg = parse_idx(&bytes[..bytes.len() - 3], None, "x").unwrap_err().to_string();
        assert!(msg.contains("offset 21"), "{msg}");
        let msg = parse_idx(&bytes[..6], None, "x").unwrap_err().to_string();
        assert!(msg.contains("offset 4"), "{msg}");
    }

    #[test]
    fn bundled_digits_load() {
        let ds = bundled_digits();
        assert_eq!(ds.len(), 1797);
        assert_eq!(ds.dim(), 64);
        assert!(ds.labels().unwrap().iter().all(|&l| l < 10));
    }
}
