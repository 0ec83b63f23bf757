//! Labelled image datasets and the big-endian IDX container.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Examples stored row-major as `[n, c, h, w]`, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let n = self.images.len() / self.labels.len().max(1);
        &self.images[i * n..(i + 1) * n]
    }

    pub fn truncate(&mut self, limit: usize) {
        if limit < self.len() {
            let n = self.images.len() / self.len();
            self.labels.truncate(limit);
            self.images.truncate(limit * n);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    pub fn new(input_shape: [usize; 3], num_classes: usize, train: Split, test: Split) -> Result<Self> {
        let n: usize = input_shape.iter().product();
        for (name, split) in [("train", &train), ("test", &test)] {
            if split.images.len() != split.len() * n {
                return Err(Error::validation(format!(
                    "{name} split holds {} values for {} examples of size {n}",
                    split.images.len(),
                    split.len()
                )));
            }
            if let Some(&bad) = split.labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::validation(format!("{name} label {bad} >= {num_classes} classes")));
            }
        }
        Ok(Dataset {
            input_shape,
            num_classes,
            train,
            test,
        })
    }

    /// Loads `train-*` and `t10k-*` IDX files from `dir` with the standard
    /// MNIST names, keeping the first `train_limit` / `test_limit` examples.
    pub fn mnist(dir: &Path, train_limit: Option<usize>, test_limit: Option<usize>) -> Result<Self> {
        let load = |prefix: &str, limit| {
            load_idx_split(
                &dir.join(format!("{prefix}-images-idx3-ubyte")),
                &dir.join(format!("{prefix}-labels-idx1-ubyte")),
                limit,
                10,
            )
        };
        let (train, shape) = load("train", train_limit)?;
        let (test, test_shape) = load("t10k", test_limit)?;
        if shape != test_shape {
            return Err(Error::validation(format!(
                "train images are {shape:?}, test images {test_shape:?}"
            )));
        }
        Dataset::new(shape, 10, train, test)
    }
}

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: PathBuf::from(path),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

/// Parses an IDX image file into `(count, [1, rows, cols], pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path, limit: Option<usize>) -> Result<(usize, [usize; 3], Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let n = limit.map_or(count, |l| l.min(count));
    let size = rows * cols;
    let end = 16 + n * size;
    if bytes.len() < end {
        return Err(format_err(
            path,
            bytes.len(),
            format!("expected {} bytes of pixels for {n} images", n * size),
        ));
    }
    let pixels = bytes[16..end].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((n, [1, rows, cols], pixels))
}

/// Parses an IDX label file, rejecting labels outside `[0, num_classes)`.
pub fn parse_idx_labels(bytes: &[u8], path: &Path, limit: Option<usize>, num_classes: usize) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let n = limit.map_or(count, |l| l.min(count));
    if bytes.len() < 8 + n {
        return Err(format_err(path, bytes.len(), format!("expected {n} labels")));
    }
    bytes[8..8 + n]
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < num_classes {
                Ok(l as usize)
            } else {
                Err(format_err(path, 8 + i, format!("label {l} outside 0..{num_classes}")))
            }
        })
        .collect()
}

/// Loads one split from a pair of IDX files.
pub fn load_idx_split(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    num_classes: usize,
) -> Result<(Split, [usize; 3])> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    let (n, shape, pixels) = parse_idx_images(&images, images_path, limit)?;
    let labels = parse_idx_labels(&labels, labels_path, limit, num_classes)?;
    if labels.len() != n {
        return Err(Error::validation(format!(
            "{} has {n} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    Ok((Split { images: pixels, labels }, shape))
}
