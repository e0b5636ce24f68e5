//! Dataset ingestion and partitioning: MNIST IDX files, a synthetic 2-D
//! Gaussian ring for desk-scale experiments, train/holdout splitting, and
//! the k disjoint partitions the per-pair training runs on.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Mnist,
    Synthetic,
}

/// A sample matrix plus stable per-sample ids. Ids survive splitting and
/// subsetting, so membership of any row can be traced back to the original
/// dataset no matter how it was sliced.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub ids: Vec<u64>,
    pub labels: Option<Vec<u8>>,
    pub source: SourceTag,
    /// Image row/col counts when the data came from an IDX file.
    pub image_dims: Option<(u32, u32)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    /// New dataset holding the given rows, preserving ids and labels.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            ids.push(self.ids[i]);
        }
        Dataset {
            samples: Tensor::from_vec(vec![indices.len(), d], data).expect("subset shape"),
            ids,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            source: self.source,
            image_dims: self.image_dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSet {
    pub k: usize,
    /// Index sets into the parent dataset, in dealt order.
    pub parts: Vec<Vec<usize>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    Fraction(f64),
    Counts { train: usize, holdout: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("file truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse a big-endian IDX image/label file pair. Pixels are scaled by 1/255
/// so they live in [0,1]; labels ride along for stratified partitioning.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx_pair(&images, &labels)
}

pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32_be(images, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(images, 4, "image count")? as usize;
    let rows = read_u32_be(images, 8, "row count")? as usize;
    let cols = read_u32_be(images, 12, "column count")? as usize;
    let expected = 16 + n * rows * cols;
    if images.len() != expected {
        return Err(Error::Format {
            offset: images.len().min(expected) as u64,
            detail: format!("image payload has {} bytes, expected {}", images.len(), expected),
        });
    }

    let lmagic = read_u32_be(labels, 0, "label magic")?;
    if lmagic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad label magic {lmagic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let ln = read_u32_be(labels, 4, "label count")? as usize;
    if ln != n {
        return Err(Error::Format {
            offset: 4,
            detail: format!("label count {ln} does not match image count {n}"),
        });
    }
    if labels.len() != 8 + ln {
        return Err(Error::Format {
            offset: labels.len().min(8 + ln) as u64,
            detail: format!("label payload has {} bytes, expected {}", labels.len(), 8 + ln),
        });
    }

    let data: Vec<f64> = images[16..].iter().map(|b| *b as f64 / 255.0).collect();
    Ok(Dataset {
        samples: Tensor::from_vec(vec![n, rows * cols], data)?,
        ids: (0..n as u64).collect(),
        labels: Some(labels[8..].to_vec()),
        source: SourceTag::Mnist,
        image_dims: Some((rows as u32, cols as u32)),
    })
}

/// Rebuild the IDX image file for a parsed dataset. Inverse of
/// `parse_idx_pair` on the image side: scaling by 255 and rounding recovers
/// the source bytes exactly.
pub fn serialize_images_idx(dataset: &Dataset) -> Result<Vec<u8>> {
    let (rows, cols) = dataset.image_dims.ok_or_else(|| {
        Error::Contract("dataset has no image dimensions to serialize".into())
    })?;
    let n = dataset.len() as u32;
    let mut out = Vec::with_capacity(16 + dataset.samples.numel());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for v in dataset.samples.data() {
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

/// n points from a mixture of `modes` Gaussians spaced equally on a circle,
/// rescaled into [0,1]^2. The affine map is fixed by the arguments alone:
/// with R = radius + 4*sigma, each coordinate maps v to (v + R) / 2R, then
/// clamps. Mode assignment is recorded in `labels`.
pub fn synth_gaussian_ring(
    n: usize,
    modes: usize,
    radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if modes < 1 {
        return Err(Error::Contract("gaussian ring needs at least one mode".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Contract(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = SeededRng::new(seed);
    let r = radius + 4.0 * sigma;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mode = rng.index(modes);
        let theta = 2.0 * std::f64::consts::PI * mode as f64 / modes as f64;
        let x = radius * theta.cos() + sigma * rng.normal();
        let y = radius * theta.sin() + sigma * rng.normal();
        data.push(((x + r) / (2.0 * r)).clamp(0.0, 1.0));
        data.push(((y + r) / (2.0 * r)).clamp(0.0, 1.0));
        labels.push((mode % 256) as u8);
    }
    Ok(Dataset {
        samples: Tensor::from_vec(vec![n, 2], data)?,
        ids: (0..n as u64).collect(),
        labels: if modes <= 256 { Some(labels) } else { None },
        source: SourceTag::Synthetic,
        image_dims: None,
    })
}

/// Disjoint train/holdout split, reproducible per seed.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    let (n_train, n_holdout) = match spec.sizes {
        SplitSizes::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Contract(format!("train fraction {f} outside [0,1]")));
            }
            let t = (f * n as f64).round() as usize;
            (t, n - t)
        }
        SplitSizes::Counts { train, holdout } => {
            if train + holdout > n {
                return Err(Error::Contract(format!(
                    "requested {train}+{holdout} samples from a dataset of {n}"
                )));
            }
            (train, holdout)
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(spec.seed).shuffle(&mut order);
    let train = dataset.subset(&order[..n_train]);
    let holdout = dataset.subset(&order[n_train..n_train + n_holdout]);
    Ok((train, holdout))
}

/// Shuffle indices by seed and deal them round-robin into k parts. Sizes end
/// up equal to within one element; part order is the dealt order.
pub fn partition(train: &Dataset, k: usize, seed: u64) -> Result<PartitionSet> {
    let n = train.len();
    if k < 1 || k > n {
        return Err(Error::Contract(format!(
            "cannot split {n} samples into {k} partitions"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        parts[pos % k].push(idx);
    }
    Ok(PartitionSet { k, parts, seed })
}

/// Label-stratified variant of `partition`: indices are grouped by label,
/// each group is shuffled, and groups are dealt through one shared
/// round-robin cursor so both global and per-label sizes stay balanced.
pub fn partition_stratified(train: &Dataset, k: usize, seed: u64) -> Result<PartitionSet> {
    let n = train.len();
    if k < 1 || k > n {
        return Err(Error::Contract(format!(
            "cannot split {n} samples into {k} partitions"
        )));
    }
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("stratified partition needs labels".into()))?;
    let mut rng = SeededRng::new(seed);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, l) in labels.iter().enumerate() {
        by_label[*l as usize].push(i);
    }
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    let mut cursor = 0usize;
    for group in by_label.iter_mut() {
        rng.shuffle(group);
        for &idx in group.iter() {
            parts[cursor % k].push(idx);
            cursor += 1;
        }
    }
    Ok(PartitionSet { k, parts, seed })
}
