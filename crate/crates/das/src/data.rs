//! Data sources and deterministic splits.
//!
//! Two sources: a synthetic generator (class-conditioned Gaussian-blob
//! images) and the standard CIFAR-10 binary batch format. Every source is
//! partitioned into train / val / scorebatch splits; the scorebatch is a
//! held-out pool that scoring mini-batches are drawn from, disjoint from
//! both training and validation data.

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::stream_rng;
use crate::tensor::Tensor;

/// CIFAR-10 binary record: 1 label byte + 3072 pixel bytes.
pub const CIFAR_RECORD_LEN: usize = 3073;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path}: {len} bytes is not a multiple of {record} (stray data at byte offset {offset})")]
    BadRecordLength {
        path: PathBuf,
        len: usize,
        record: usize,
        offset: usize,
    },
    #[error("no .bin batch files in {0}")]
    NoBatchFiles(PathBuf),
    #[error("dataset too small: {0} samples")]
    TooSmall(usize),
    #[error("label {label} out of range in {path}")]
    BadLabel { path: PathBuf, label: u8 },
}

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        samples_per_class: usize,
        noise: f64,
        /// (channels, height, width)
        image_shape: (usize, usize, usize),
    },
    Cifar10Binary { dir: PathBuf },
}

impl DatasetSource {
    /// Desk-scale synthetic default: 10 classes of 3x16x16 images.
    pub fn synthetic_default() -> Self {
        DatasetSource::Synthetic {
            classes: 10,
            samples_per_class: 200,
            noise: 1.0,
            image_shape: (3, 16, 16),
        }
    }
}

/// A set of images with labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Gather a subset by index.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let per = self.sample_len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        LabeledSet {
            images: Tensor::from_vec(&shape, data),
            labels,
        }
    }

    /// Draw `n` distinct samples (fewer if the set is smaller).
    pub fn pick_batch(&self, n: usize, rng: &mut impl Rng) -> LabeledSet {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n.min(self.len()));
        self.subset(&idx)
    }
}

/// Train / val / scorebatch partition of a source.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub scorebatch: LabeledSet,
    pub classes: usize,
    /// (channels, height, width)
    pub image_shape: (usize, usize, usize),
}

/// Materialize a source and split it deterministically.
pub fn load_dataset(src: &DatasetSource, seed: u64) -> Result<DatasetSplits, DataError> {
    let (full, classes, image_shape) = match src {
        DatasetSource::Synthetic {
            classes,
            samples_per_class,
            noise,
            image_shape,
        } => (
            generate_synthetic(*classes, *samples_per_class, *noise, *image_shape, seed),
            *classes,
            *image_shape,
        ),
        DatasetSource::Cifar10Binary { dir } => {
            (load_cifar10_binary(dir)?, 10, (3, 32, 32))
        }
    };
    let total = full.len();
    if total < 8 {
        return Err(DataError::TooSmall(total));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream_rng(seed, "dataset-split", 0));
    let sb_len = (total / 5).clamp(2, 256);
    let val_len = (total - sb_len) / 5;
    let scorebatch = full.subset(&order[..sb_len]);
    let val = full.subset(&order[sb_len..sb_len + val_len]);
    let train = full.subset(&order[sb_len + val_len..]);
    Ok(DatasetSplits {
        train,
        val,
        scorebatch,
        classes,
        image_shape,
    })
}

/// Class-conditioned Gaussian-blob images: each class is a fixed mean
/// image built from two soft blobs; samples add isotropic pixel noise.
/// `noise == 0` makes within-class images identical.
fn generate_synthetic(
    classes: usize,
    samples_per_class: usize,
    noise: f64,
    image_shape: (usize, usize, usize),
    seed: u64,
) -> LabeledSet {
    let (c, h, w) = image_shape;
    let per = c * h * w;
    let mut means = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut rng = stream_rng(seed, "synthetic-class", k as u64);
        let mut mean = vec![0.0f64; per];
        for _blob in 0..2 {
            let cy: f64 = rng.gen_range(0.0..h as f64);
            let cx: f64 = rng.gen_range(0.0..w as f64);
            let sigma: f64 = rng.gen_range(1.5..3.5);
            let amps: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        mean[(ci * h + y) * w + x] +=
                            amps[ci] * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        means.push(mean);
    }
    let total = classes * samples_per_class;
    let mut data = Vec::with_capacity(total * per);
    let mut labels = Vec::with_capacity(total);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for k in 0..classes {
        for i in 0..samples_per_class {
            let mut rng = stream_rng(
                seed,
                "synthetic-sample",
                (k * samples_per_class + i) as u64,
            );
            for &m in &means[k] {
                data.push(m + noise * normal.sample(&mut rng));
            }
            labels.push(k);
        }
    }
    LabeledSet {
        images: Tensor::from_vec(&[total, c, h, w], data),
        labels,
    }
}

/// Read every `*.bin` file in the directory (sorted by name) as CIFAR-10
/// binary records. Pixels are scaled to [0, 1].
fn load_cifar10_binary(dir: &PathBuf) -> Result<LabeledSet, DataError> {
    let io_err = |path: PathBuf| move |source: std::io::Error| DataError::Io { path, source };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir.clone()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "bin").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::NoBatchFiles(dir.clone()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = fs::read(&path).map_err(io_err(path.clone()))?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            let offset = (bytes.len() / CIFAR_RECORD_LEN) * CIFAR_RECORD_LEN;
            return Err(DataError::BadRecordLength {
                path,
                len: bytes.len(),
                record: CIFAR_RECORD_LEN,
                offset,
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = record[0];
            if label > 9 {
                return Err(DataError::BadLabel { path, label });
            }
            labels.push(label as usize);
            data.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let total = labels.len();
    Ok(LabeledSet {
        images: Tensor::from_vec(&[total, 3, 32, 32], data),
        labels,
    })
}

/// Write a labeled set of 3x32x32 images as CIFAR-10 binary records.
/// Pixels are clamped to [0, 1] and quantized to bytes.
pub fn write_cifar_binary(set: &LabeledSet, path: &PathBuf) -> Result<(), DataError> {
    assert_eq!(&set.images.shape()[1..], &[3, 32, 32], "CIFAR records are 3x32x32");
    let per = 3072;
    let mut bytes = Vec::with_capacity(set.len() * CIFAR_RECORD_LEN);
    for i in 0..set.len() {
        bytes.push(set.labels[i] as u8);
        for &v in &set.images.data()[i * per..(i + 1) * per] {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.clone(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_synth(noise: f64) -> DatasetSource {
        DatasetSource::Synthetic {
            classes: 3,
            samples_per_class: 10,
            noise,
            image_shape: (1, 4, 4),
        }
    }

    #[test]
    fn zero_noise_makes_within_class_images_identical() {
        let splits = load_dataset(&tiny_synth(0.0), 1).unwrap();
        let all = [&splits.train, &splits.val, &splits.scorebatch];
        // Collect one reference image per class and compare all others.
        let per = 16;
        let mut seen: [Option<Vec<f64>>; 3] = [None, None, None];
        for set in all {
            for i in 0..set.len() {
                let img = set.images.data()[i * per..(i + 1) * per].to_vec();
                match &seen[set.labels[i]] {
                    Some(r) => assert_eq!(r, &img),
                    None => seen[set.labels[i]] = Some(img),
                }
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint_in_size() {
        let a = load_dataset(&tiny_synth(0.5), 42).unwrap();
        let b = load_dataset(&tiny_synth(0.5), 42).unwrap();
        assert_eq!(a.train.images.data(), b.train.images.data());
        assert_eq!(a.val.labels, b.val.labels);
        assert_eq!(a.scorebatch.labels, b.scorebatch.labels);
        assert_eq!(
            a.train.len() + a.val.len() + a.scorebatch.len(),
            30
        );
    }

    #[test]
    fn different_seed_changes_the_partition() {
        let a = load_dataset(&tiny_synth(0.5), 1).unwrap();
        let b = load_dataset(&tiny_synth(0.5), 2).unwrap();
        assert_ne!(a.train.images.data(), b.train.images.data());
    }

    #[test]
    fn cifar_round_trip_and_bad_length() {
        let dir = tempfile::tempdir().unwrap();
        let n = 20;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut rng = stream_rng(7, "test-cifar", 0);
        for i in 0..n {
            labels.push(i % 10);
            for _ in 0..3072 {
                data.push(rng.gen_range(0.0..1.0));
            }
        }
        let set = LabeledSet {
            images: Tensor::from_vec(&[n, 3, 32, 32], data),
            labels,
        };
        let path = dir.path().join("data_batch_1.bin");
        write_cifar_binary(&set, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), (n * CIFAR_RECORD_LEN) as u64);

        let loaded = load_dataset(
            &DatasetSource::Cifar10Binary {
                dir: dir.path().to_path_buf(),
            },
            0,
        )
        .unwrap();
        assert_eq!(
            loaded.train.len() + loaded.val.len() + loaded.scorebatch.len(),
            n
        );

        // Truncate one byte: record length violated, offset reported.
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        match load_dataset(
            &DatasetSource::Cifar10Binary {
                dir: dir.path().to_path_buf(),
            },
            0,
        ) {
            Err(DataError::BadRecordLength { offset, .. }) => {
                assert_eq!(offset, (n - 1) * CIFAR_RECORD_LEN)
            }
            other => panic!("expected BadRecordLength, got {:?}", other.map(|_| ())),
        }
    }
}
