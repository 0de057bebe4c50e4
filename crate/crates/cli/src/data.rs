//! Dataset sources: IDX directories (raw or gzipped) and the synthetic
//! block dataset.

use std::io::Read;
use std::path::{Path, PathBuf};

use bilinear_core::dataset::{
    parse_idx_images, parse_idx_labels, synthetic_quadrant_dataset, LabeledDataset,
};
use flate2::read::GzDecoder;

use crate::{read_file, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// MNIST-layout IDX files (`train-*`, `t10k-*`); also used for Fashion-MNIST.
    Idx(PathBuf),
    Synthetic(SyntheticSpec),
}

pub struct Splits {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [
        stem.to_owned(),
        format!("{stem}.gz"),
        dotted.clone(),
        format!("{dotted}.gz"),
    ] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "IDX file not found (raw or .gz)",
        ),
    ))
}

/// Loads `{prefix}-images-idx3-ubyte` and `{prefix}-labels-idx1-ubyte`,
/// scaling pixels to `[0, 1]`.
pub fn load_idx_split(dir: &Path, prefix: &str, classes: usize) -> Result<LabeledDataset> {
    let images = parse_idx_images(&read_maybe_gz(&find(
        dir,
        &format!("{prefix}-images-idx3-ubyte"),
    )?)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(&find(
        dir,
        &format!("{prefix}-labels-idx1-ubyte"),
    )?)?)?;
    Ok(LabeledDataset::from_idx(images, &labels, classes)?)
}

impl DataSource {
    pub fn load(&self) -> Result<Splits> {
        match self {
            DataSource::Idx(dir) => Ok(Splits {
                train: load_idx_split(dir, "train", 10)?,
                validation: load_idx_split(dir, "t10k", 10)?,
            }),
            DataSource::Synthetic(s) => Ok(Splits {
                train: synthetic_quadrant_dataset(s.samples, s.dim, s.classes, s.noise, s.seed)?,
                validation: synthetic_quadrant_dataset(
                    s.samples.div_ceil(4),
                    s.dim,
                    s.classes,
                    s.noise,
                    s.seed.wrapping_add(1),
                )?,
            }),
        }
    }

    pub fn load_validation(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Idx(dir) => load_idx_split(dir, "t10k", 10),
            DataSource::Synthetic(_) => Ok(self.load()?.validation),
        }
    }
}
