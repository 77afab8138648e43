//! Datasets, the IDX image format, synthetic generators and file output.

pub mod idx;
pub mod io;
pub mod synth;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use idx::{bundled_digits, encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use synth::{synth_binary_patterns, synth_mixture_2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dims {
    Image { height: usize, width: usize },
    Flat(usize),
}

impl Dims {
    pub fn len(&self) -> usize {
        match *self {
            Dims::Image { height, width } => height * width,
            Dims::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Items are equal-length `f64` vectors. Image datasets are confined to
/// `[0, 1]`; flat datasets may hold any finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    items: Vec<Vec<f64>>,
    dims: Dims,
    binarized: bool,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, items: Vec<Vec<f64>>, dims: Dims) -> Result<Self> {
        let n = dims.len();
        if n == 0 {
            return Err(Error::invalid("dataset items must have positive dimension"));
        }
        for (k, item) in items.iter().enumerate() {
            if item.len() != n {
                return Err(Error::invalid(format!(
                    "item {k} has {} values, expected {n}",
                    item.len()
                )));
            }
            if item.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("item {k} has non-finite values")));
            }
            if matches!(dims, Dims::Image { .. }) && item.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("image item {k} has values outside [0, 1]")));
            }
        }
        let binarized = !items.is_empty() && items.iter().flatten().all(|&v| v == 0.0 || v == 1.0);
        Ok(Self {
            name: name.into(),
            items,
            dims,
            binarized,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.items.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} items",
                labels.len(),
                self.items.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Reinterprets flat items as `height x width` images.
    pub fn as_image(self, height: usize, width: usize) -> Result<Self> {
        let mut out = Self::new(self.name, self.items, Dims::Image { height, width })?;
        out.labels = self.labels;
        Ok(out)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn items(&self) -> &[Vec<f64>] {
        &self.items
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Values per item.
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// First `n` items (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        Self {
            name: self.name.clone(),
            items: self.items.iter().take(n).cloned().collect(),
            dims: self.dims,
            binarized: self.binarized,
            labels: self.labels.as_ref().map(|l| l.iter().take(n).copied().collect()),
        }
    }

    /// Rows `indices` stacked as a `[len, dim]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            let item = self.items.get(i).ok_or_else(|| {
                Error::invalid(format!("index {i} out of range for {} items", self.len()))
            })?;
            data.extend_from_slice(item);
        }
        Tensor::new(vec![indices.len(), self.dim()], data)
    }

    /// The whole dataset as one tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// A shuffled partition of the item indices into batches of at most
    /// `batch_size`.
    pub fn epoch_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }
}

/// Block-mean pooling by `factor`, then `value >= threshold` maps to 1.
pub fn downsample_binarize(ds: &Dataset, factor: usize, threshold: f64) -> Result<Dataset> {
    let Dims::Image { height, width } = ds.dims() else {
        return Err(Error::invalid("downsampling needs image dimensions"));
    };
    if factor == 0 || height % factor != 0 || width % factor != 0 {
        return Err(Error::invalid(format!(
            "{height}x{width} image is not divisible by factor {factor}"
        )));
    }
    let (h, w) = (height / factor, width / factor);
    let area = (factor * factor) as f64;
    let items = ds
        .items()
        .iter()
        .map(|img| {
            let mut out = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for dr in 0..factor {
                        let row = (r * factor + dr) * width + c * factor;
                        acc += img[row..row + factor].iter().sum::<f64>();
                    }
                    out.push(if acc / area >= threshold { 1.0 } else { 0.0 });
                }
            }
            out
        })
        .collect();
    let mut out = Dataset::new(
        format!("{}-x{factor}-bin", ds.name()),
        items,
        Dims::Image { height: h, width: w },
    )?;
    out.binarized = true;
    out.labels = ds.labels.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn image(items: Vec<Vec<f64>>, h: usize, w: usize) -> Dataset {
        Dataset::new("t", items, Dims::Image { height: h, width: w }).unwrap()
    }

    #[test]
    fn rejects_out_of_range_images() {
        assert!(Dataset::new("t", vec![vec![1.5]], Dims::Image { height: 1, width: 1 }).is_err());
        assert!(Dataset::new("t", vec![vec![1.5]], Dims::Flat(1)).is_ok());
    }

    #[test]
    fn binarize_identity_on_binary_data() {
        let ds = image(vec![vec![0., 1., 1., 0.]], 2, 2);
        let out = downsample_binarize(&ds, 1, 0.5).unwrap();
        assert_eq!(out.items(), ds.items());
        assert!(out.is_binarized());
    }

    #[test]
    fn all_white_stays_white() {
        let ds = image(vec![vec![1.0; 16]], 4, 4);
        for f in [1, 2, 4] {
            assert!(downsample_binarize(&ds, f, 0.5).unwrap().items()[0].iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn checkerboard_pools_to_half() {
        let board: Vec<f64> = (0..16).map(|k| ((k / 4 + k % 4) % 2) as f64).collect();
        let ds = image(vec![board], 4, 4);
        assert_eq!(downsample_binarize(&ds, 2, 0.5).unwrap().items()[0], vec![1.0; 4]);
        assert_eq!(downsample_binarize(&ds, 2, 0.6).unwrap().items()[0], vec![0.0; 4]);
    }

    #[test]
    fn indivisible_factor_fails() {
        let ds = image(vec![vec![0.0; 9]], 3, 3);
        assert!(downsample_binarize(&ds, 2, 0.5).is_err());
    }

    #[test]
    fn batches_partition_indices() {
        let ds = Dataset::new("t", (0..10).map(|k| vec![k as f64]).collect(), Dims::Flat(1)).unwrap();
        let batches = ds.epoch_batches(3, &mut seeded(1)).unwrap();
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(batches, ds.epoch_batches(3, &mut seeded(1)).unwrap());
    }
}
