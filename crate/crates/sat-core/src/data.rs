//! In-memory datasets and the synthetic blob generator.
//!
//! File-format loaders (IDX, CIFAR-10 binary) live in the companion crate;
//! everything here is pure computation.

use crate::rng;
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// A labeled image set: `images` is `[n, c, h, w]` with values in `[0, 1]`,
/// `labels[i] < class_count`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataError {
    /// Image tensor is not `[n, c, h, w]` or disagrees with the label count.
    BadLayout {
        image_shape: Vec<usize>,
        labels: usize,
    },
    /// A pixel escaped `[0, 1]`.
    PixelOutOfRange { index: usize, value: f64 },
    /// A label at or above the class count.
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    /// Blob generation requires a positive separation.
    BadSeparation { separation: f64 },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::BadLayout {
                image_shape,
                labels,
            } => write!(
                f,
                "images {image_shape:?} do not describe {labels} labeled samples"
            ),
            DataError::PixelOutOfRange { index, value } => {
                write!(f, "pixel {index} = {value} outside [0, 1]")
            }
            DataError::LabelOutOfRange {
                index,
                label,
                classes,
            } => write!(f, "label {label} at sample {index} >= {classes} classes"),
            DataError::BadSeparation { separation } => {
                write!(f, "separation must be positive, got {separation}")
            }
        }
    }
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, split: String) -> Result<Self, DataError> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(DataError::BadLayout {
                image_shape: images.shape().to_vec(),
                labels: labels.len(),
            });
        }
        Ok(Dataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[c, h, w]`.
    pub fn sample_shape(&self) -> Vec<usize> {
        self.images.shape()[1..].to_vec()
    }

    fn sample_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Enforce the range and label invariants against a class count.
    pub fn validate(&self, class_count: usize) -> Result<(), DataError> {
        for (i, &v) in self.images.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::PixelOutOfRange { index: i, value: v });
            }
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= class_count {
                return Err(DataError::LabelOutOfRange {
                    index: i,
                    label: l,
                    classes: class_count,
                });
            }
        }
        Ok(())
    }

    /// Contiguous batch `[start, end)` as a fresh tensor plus labels.
    pub fn slice_batch(&self, start: usize, end: usize) -> (Tensor, Vec<usize>) {
        let sl = self.sample_len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = end - start;
        let data = self.images.data()[start * sl..end * sl].to_vec();
        (
            Tensor::new(shape, data).unwrap(),
            self.labels[start..end].to_vec(),
        )
    }

    /// Batch gathered by arbitrary sample indices (used by shuffled training).
    pub fn gather_batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let sl = self.sample_len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * sl);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * sl..(i + 1) * sl]);
            labels.push(self.labels[i]);
        }
        (Tensor::new(shape, data).unwrap(), labels)
    }

    /// Single sample as a batch of one.
    pub fn sample(&self, index: usize) -> (Tensor, usize) {
        let (t, l) = self.slice_batch(index, index + 1);
        (t, l[0])
    }

    /// First `n` samples (or all of them, whichever is smaller).
    pub fn take(&self, n: usize, split: &str) -> Dataset {
        let end = core::cmp::min(n, self.len());
        let (images, labels) = self.slice_batch(0, end);
        Dataset {
            images,
            labels,
            split: String::from(split),
        }
    }
}

/// Gaussian class clusters at seeded random centers, clipped to `[0, 1]`.
///
/// Centers are drawn uniformly from `[0.25, 0.75]^dim`; points scatter around
/// them with per-coordinate standard deviation `0.25 / separation`, so larger
/// separations give cleaner classes. Images come out as `[n, 1, 1, dim]`.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(separation > 0.0) {
        return Err(DataError::BadSeparation { separation });
    }
    let mut rng = rng::rng_from(rng::derive_seed(seed, rng::stream::BLOBS, 0));
    let mut centers = Vec::with_capacity(classes * dim);
    for _ in 0..classes * dim {
        centers.push(rng::uniform_in(&mut rng, 0.25, 0.75));
    }
    let sigma = 0.25 / separation;
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        for _ in 0..per_class {
            for d in 0..dim {
                let v = centers[class * dim + d] + sigma * rng::standard_normal(&mut rng);
                data.push(crate::fmath::clamp(v, 0.0, 1.0));
            }
            labels.push(class);
        }
    }
    Ok(Dataset {
        images: Tensor::new(alloc::vec![n, 1, 1, dim], data).unwrap(),
        labels,
        split: String::from("blobs"),
    })
}

/// Train/validation blob pair drawn from the *same* class centers (one
/// underlying distribution) with independent point noise: the first
/// `per_class_train` points of every class form the train split, the rest the
/// validation split.
pub fn synth_blobs_split(
    classes: usize,
    per_class_train: usize,
    per_class_val: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let per_class = per_class_train + per_class_val;
    let all = synth_blobs(classes, per_class, dim, separation, seed)?;
    let mut train_idx = Vec::with_capacity(classes * per_class_train);
    let mut val_idx = Vec::with_capacity(classes * per_class_val);
    for class in 0..classes {
        let base = class * per_class;
        train_idx.extend(base..base + per_class_train);
        val_idx.extend(base + per_class_train..base + per_class);
    }
    let (train_images, train_labels) = all.gather_batch(&train_idx);
    let (val_images, val_labels) = all.gather_batch(&val_idx);
    Ok((
        Dataset {
            images: train_images,
            labels: train_labels,
            split: String::from("blobs-train"),
        },
        Dataset {
            images: val_images,
            labels: val_labels,
            split: String::from("blobs-val"),
        },
    ))
}
