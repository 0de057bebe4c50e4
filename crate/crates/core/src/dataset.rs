//! Labeled image datasets: IDX (MNIST/Fashion-MNIST) decoding, synthetic
//! block datasets and deterministic mini-batching.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded IDX image file. `pixels` is `count × (height·width)`, row-major
/// per image, with bytes mapped to `b / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub height: usize,
    pub width: usize,
    pub pixels: Matrix,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.rows()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(Error::IdxLength {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::IdxMagic { expected, found });
    }
    Ok(())
}

fn check_length(bytes: &[u8], header: usize, dims: &[u32]) -> Result<usize> {
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or(Error::TooLarge {
            what: "IDX payload",
            size: usize::MAX,
            limit: isize::MAX as usize,
        })?;
    let expected = header + payload;
    if bytes.len() != expected {
        return Err(Error::IdxLength {
            expected,
            found: bytes.len(),
        });
    }
    Ok(payload)
}

/// Parses an IDX3 unsigned-byte image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)?;
    let height = read_u32(bytes, 8)?;
    let width = read_u32(bytes, 12)?;
    check_length(bytes, 16, &[count, height, width])?;
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        height: height as usize,
        width: width as usize,
        pixels: Matrix::new(count as usize, (height * width) as usize, data)?,
    })
}

/// Parses an IDX1 unsigned-byte label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)?;
    check_length(bytes, 8, &[count])?;
    Ok(bytes[8..].to_vec())
}

/// Inverse of [`parse_idx_images`]; pixels are mapped back with
/// `round(255 · v)`, so parsed files re-serialize byte for byte.
pub fn serialize_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.as_slice().len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.height as u32).to_be_bytes());
    out.extend_from_slice(&(images.width as u32).to_be_bytes());
    out.extend(
        images
            .pixels
            .as_slice()
            .iter()
            .map(|&v| libm::round(v.clamp(0.0, 1.0) * 255.0) as u8),
    );
    out
}

pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// `N × D` inputs in `[0, 1]` with class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                context: "dataset labels",
                expected: images.rows(),
                found: labels.len(),
            });
        }
        if images.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: classes,
            });
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn from_idx(images: IdxImages, labels: &[u8], classes: usize) -> Result<Self> {
        Self::new(
            images.pixels,
            labels.iter().map(|&l| usize::from(l)).collect(),
            classes,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.row(i)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Block dataset: sample `i` has label `i mod classes` and is the indicator of
/// coordinate block `label` (width `d / classes`) plus Gaussian noise of
/// standard deviation `noise`, clamped into `[0, 1]`.
pub fn synthetic_quadrant_dataset(
    n: usize,
    d: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes == 0 || d % classes != 0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "dimension {d} is not divisible by {classes} classes"
        )));
    }
    let block = d / classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        labels.push(label);
        let row = images.row_mut(i);
        for (j, px) in row.iter_mut().enumerate() {
            let base = if j / block == label { 1.0 } else { 0.0 };
            let jitter: f64 = if noise > 0.0 {
                noise * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            } else {
                0.0
            };
            *px = (base + jitter).clamp(0.0, 1.0);
        }
    }
    LabeledDataset::new(images, labels, classes)
}

/// Epoch-wise shuffled mini-batches. The permutation for an epoch depends
/// only on `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(Self {
            len,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    /// The next epoch to be produced by [`Self::next_epoch`].
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    /// Batches for the current epoch; the final batch may be short.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let order = self.permutation(self.epoch);
        self.epoch += 1;
        order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn parses_tiny_image_file() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[1, 2, 2]);
        bytes.extend_from_slice(&[0xFF, 0x00, 0x80, 0x00]);
        let img = parse_idx_images(&bytes).unwrap();
        assert_eq!(img.pixels.shape(), (1, 4));
        assert_eq!(img.pixels.row(0), &[1.0, 0.0, 128.0 / 255.0, 0.0]);
        assert_eq!(serialize_idx_images(&img), bytes);
    }

    #[test]
    fn zero_payload_is_zero_matrix() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[3, 2, 2]);
        bytes.extend_from_slice(&[0; 12]);
        let img = parse_idx_images(&bytes).unwrap();
        assert!(img.pixels.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parses_labels() {
        let mut bytes = header(IDX_LABELS_MAGIC, &[3]);
        bytes.extend_from_slice(&[0, 4, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 4, 9]);
        assert!(parse_idx_labels(&header(IDX_LABELS_MAGIC, &[0]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn wrong_magic_names_observed_value() {
        let mut bytes = header(IDX_LABELS_MAGIC, &[1, 1, 1]);
        bytes.push(0);
        assert_eq!(
            parse_idx_images(&bytes),
            Err(Error::IdxMagic {
                expected: IDX_IMAGES_MAGIC,
                found: IDX_LABELS_MAGIC
            })
        );
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(
            parse_idx_images(&bytes),
            Err(Error::IdxLength {
                expected: 24,
                found: 19
            })
        );
        assert_eq!(
            parse_idx_labels(&[0, 0, 8]),
            Err(Error::IdxLength {
                expected: 4,
                found: 3
            })
        );
    }

    #[test]
    fn synthetic_is_balanced_and_exact_without_noise() {
        let ds = synthetic_quadrant_dataset(40, 8, 4, 0.0, 0).unwrap();
        assert_eq!(ds.len(), 40);
        let mut counts = [0; 4];
        for &l in ds.labels() {
            counts[l] += 1;
        }
        assert_eq!(counts, [10; 4]);
        for i in 0..40 {
            let label = ds.labels()[i];
            for (j, &px) in ds.image(i).iter().enumerate() {
                assert_eq!(px, if j / 2 == label { 1.0 } else { 0.0 });
            }
        }
        assert!(synthetic_quadrant_dataset(10, 7, 4, 0.0, 0).is_err());
    }

    #[test]
    fn dataset_validation() {
        let images = Matrix::zeros(2, 3);
        assert!(LabeledDataset::new(images.clone(), vec![0], 2).is_err());
        assert!(LabeledDataset::new(images.clone(), vec![0, 2], 2).is_err());
        assert!(LabeledDataset::new(Matrix::from_rows(&[[1.5]]), vec![0], 1).is_err());
        assert!(LabeledDataset::new(images, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn batch_iterator_rejects_zero_batch() {
        assert!(BatchIterator::new(10, 0, 0).is_err());
    }

    #[test]
    fn shuffle_depends_on_seed_and_epoch_only() {
        let a = BatchIterator::new(50, 7, 3).unwrap();
        let b = BatchIterator::new(50, 7, 3).unwrap();
        assert_eq!(a.permutation(4), b.permutation(4));
        assert_ne!(a.permutation(0), a.permutation(1));
        let mut it = BatchIterator::new(50, 7, 3).unwrap();
        let batches = it.next_epoch();
        assert_eq!(batches.len(), 8);
        assert_eq!(batches.last().unwrap().len(), 1);
        assert_eq!(it.epoch(), 1);
    }
}
