//! Readers for the published binary releases of MNIST, Fashion-MNIST (IDX)
//! and CIFAR-10 (batched binary).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureShape, LabeledDataset, LabeledSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageDatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl ImageDatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImageDatasetName::Mnist => "mnist",
            ImageDatasetName::FashionMnist => "fashion_mnist",
            ImageDatasetName::Cifar10 => "cifar10",
        }
    }
}

impl FromStr for ImageDatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(ImageDatasetName::Mnist),
            "fashion_mnist" | "fashion-mnist" => Ok(ImageDatasetName::FashionMnist),
            "cifar10" | "cifar-10" => Ok(ImageDatasetName::Cifar10),
            other => Err(Error::Argument(format!("unknown image dataset {other:?}"))),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses an IDX image file (magic 0x00000803) into `[0, 1]`-scaled rows.
fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(Array2<f64>, usize, usize)> {
    if bytes.len() < 16 {
        return Err(Error::load(path, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != 0x0000_0803 {
        return Err(Error::load(path, format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::load(
            path,
            format!("length {} does not match header ({expected} bytes expected)", bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let features = Array2::from_shape_vec((n, rows * cols), data).map_err(|e| Error::load(path, e.to_string()))?;
    Ok((features, rows, cols))
}

/// Parses an IDX label file (magic 0x00000801).
fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    if bytes.len() < 8 {
        return Err(Error::load(path, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != 0x0000_0801 {
        return Err(Error::load(path, format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::load(
            path,
            format!("length {} does not match header ({} bytes expected)", bytes.len(), 8 + n),
        ));
    }
    let labels: Vec<usize> = bytes[8..].iter().map(|&b| b as usize).collect();
    if labels.iter().any(|&l| l > 9) {
        return Err(Error::load(path, "label outside 0..=9"));
    }
    Ok(labels)
}

fn load_idx_split(dir: &Path, prefix: &str) -> Result<(LabeledSet, usize, usize)> {
    let img_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let (features, rows, cols) = parse_idx_images(&img_path, &read_file(&img_path)?)?;
    let labels = parse_idx_labels(&lbl_path, &read_file(&lbl_path)?)?;
    if labels.len() != features.nrows() {
        return Err(Error::load(
            &lbl_path,
            format!("{} labels for {} images", labels.len(), features.nrows()),
        ));
    }
    Ok((LabeledSet { features, labels }, rows, cols))
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parses one CIFAR-10 binary batch, converting planar RGB to channels-last.
fn parse_cifar_batch(path: &Path, bytes: &[u8]) -> Result<LabeledSet> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::load(
            path,
            format!("length {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut features = Array2::zeros((n, 3 * 32 * 32));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::load(path, format!("record {i}: label {label} outside 0..=9")));
        }
        labels.push(label);
        let planes = &rec[1..];
        let mut row = features.row_mut(i);
        for c in 0..3 {
            for p in 0..1024 {
                row[p * 3 + c] = planes[c * 1024 + p] as f64 / 255.0;
            }
        }
    }
    Ok(LabeledSet { features, labels })
}

fn concat_sets(sets: Vec<LabeledSet>) -> LabeledSet {
    let views: Vec<_> = sets.iter().map(|s| s.features.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");
    let labels = sets.into_iter().flat_map(|s| s.labels).collect();
    LabeledSet { features, labels }
}

fn cifar_dir(root: &Path) -> PathBuf {
    let nested = root.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Loads `<root>/<name>/` in the dataset's canonical binary layout. Pixel
/// values are scaled to `[0, 1]`; the canonical train/test split is kept.
///
/// Nothing is downloaded.
pub fn load_image_dataset(name: ImageDatasetName, root: &Path) -> Result<LabeledDataset> {
    let dir = root.join(name.as_str());
    match name {
        ImageDatasetName::Mnist | ImageDatasetName::FashionMnist => {
            let (train, rows, cols) = load_idx_split(&dir, "train")?;
            let (test, trows, tcols) = load_idx_split(&dir, "t10k")?;
            if (rows, cols) != (trows, tcols) {
                return Err(Error::load(&dir, "train and test image sizes differ"));
            }
            Ok(LabeledDataset {
                name: name.as_str().into(),
                shape: FeatureShape::Image {
                    channels: 1,
                    height: rows,
                    width: cols,
                },
                num_classes: 10,
                train,
                test,
            })
        }
        ImageDatasetName::Cifar10 => {
            let dir = cifar_dir(&dir);
            let mut train = Vec::new();
            for b in 1..=5 {
                let p = dir.join(format!("data_batch_{b}.bin"));
                train.push(parse_cifar_batch(&p, &read_file(&p)?)?);
            }
            let tp = dir.join("test_batch.bin");
            let test = parse_cifar_batch(&tp, &read_file(&tp)?)?;
            Ok(LabeledDataset {
                name: name.as_str().into(),
                shape: FeatureShape::Image {
                    channels: 3,
                    height: 32,
                    width: 32,
                },
                num_classes: 10,
                train: concat_sets(train),
                test,
            })
        }
    }
}
