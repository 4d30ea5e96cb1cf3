// Copyright 2026 The IPLT Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Labelled image datasets: the MNIST IDX reader and a seeded synthetic
//! generator.
//!
//! Pixels are stored as `f64` in `[0, 1]` (IDX bytes divided by 255).

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{Rng, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, header promises {expected} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelRange { index: usize, label: usize, classes: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self, DataError> {
        if images.rank() != 4 {
            return Err(DataError::Dimension(format!(
                "images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if images.dim(0) != labels.len() {
            return Err(DataError::Dimension(format!(
                "{} images but {} labels",
                images.dim(0),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelRange { index, label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Copies the listed samples, in the given order, into one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.images.row_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
        }
        let [c, h, w] = self.sample_shape();
        let images = Tensor::new(vec![indices.len(), c, h, w], data).expect("batch of an existing dataset");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let (images, labels) = self.batch(&(0..n).collect::<Vec<_>>());
        Dataset {
            images,
            labels,
            classes: self.classes,
            split: self.split,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an IDX header, returning the dimensions and the payload.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let header = 4 + 4 * rank;
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    let found = be(0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..rank).map(|d| be(4 + 4 * d) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(DataError::Truncated {
                path: path.to_path_buf(),
                expected,
                actual: bytes.len(),
            });
        }
        return Err(DataError::Dimension(format!(
            "{}: {} trailing bytes after {dims:?} payload",
            path.display(),
            bytes.len() - expected
        )));
    }
    Ok((dims, &bytes[header..]))
}

/// Reads an MNIST-style image/label IDX pair.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset, DataError> {
    let image_bytes = read(images)?;
    let (dims, pixels) = parse_idx(images, &image_bytes, IDX_IMAGES_MAGIC, 3)?;
    let label_bytes = read(labels)?;
    let (ldims, raw_labels) = parse_idx(labels, &label_bytes, IDX_LABELS_MAGIC, 1)?;
    if dims[0] != ldims[0] {
        return Err(DataError::Dimension(format!(
            "{} images in {} but {} labels in {}",
            dims[0],
            images.display(),
            ldims[0],
            labels.display()
        )));
    }
    if dims[0] == 0 {
        return Err(DataError::Empty);
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let images =
        Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data).map_err(|e| DataError::Dimension(e.to_string()))?;
    let labels = raw_labels.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(images, labels, MNIST_CLASSES, split)
}

/// Standard MNIST file names inside `dir`.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

/// Parameters of [`make_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    /// `[C, H, W]`
    pub shape: [usize; 3],
    /// Per-pixel Gaussian noise level.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(samples: usize, classes: usize, shape: [usize; 3], seed: u64) -> Self {
        Self {
            samples,
            classes,
            shape,
            noise: 0.1,
            seed,
        }
    }
}

/// Gaussian-blob images: class `c` puts a bright blob near a fixed point on a
/// circle around the image centre (angle `2*pi*c/classes`); each sample
/// jitters the centre and adds pixel noise. Labels cycle through the classes
/// so every class is equally represented.
pub fn make_synthetic(spec: &SyntheticSpec, split: Split) -> Result<Dataset, DataError> {
    let [c, h, w] = spec.shape;
    if spec.samples == 0 {
        return Err(DataError::Empty);
    }
    if spec.classes < 2 {
        return Err(DataError::Spec(format!(
            "need at least 2 classes, got {}",
            spec.classes
        )));
    }
    if c == 0 || h < 4 || w < 4 {
        return Err(DataError::Spec(format!("image shape {:?} is too small", spec.shape)));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(DataError::Spec(format!("noise {} must be finite and >= 0", spec.noise)));
    }
    let stream = match split {
        Split::Train => 10,
        Split::Test => 11,
    };
    let mut rng = Rng::with_stream(spec.seed, stream);
    let radius = 0.3 * h.min(w) as f64;
    let sigma = 0.12 * h.min(w) as f64;
    let (cy0, cx0) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(spec.samples * c * h * w);
    let mut labels = Vec::with_capacity(spec.samples);
    for n in 0..spec.samples {
        let label = n % spec.classes;
        let angle = std::f64::consts::TAU * label as f64 / spec.classes as f64;
        let cy = cy0 + radius * angle.sin() + 0.5 * rng.normal();
        let cx = cx0 + radius * angle.cos() + 0.5 * rng.normal();
        for _ in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    data.push((-d2 / (2.0 * sigma * sigma)).exp() + spec.noise * rng.normal());
                }
            }
        }
        labels.push(label);
    }
    let images = Tensor::new(vec![spec.samples, c, h, w], data).map_err(|e| DataError::Spec(e.to_string()))?;
    Dataset::new(images, labels, spec.classes, split)
}
