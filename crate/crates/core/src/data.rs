//! Datasets: seeded Gaussian blobs and IDX (MNIST-style) files.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::models::Example;
use crate::rng::{self, tag};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Row-major features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(DataError::Invalid(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != dim * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!(
                "label {l} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            features: self.row(i),
            label: self.labels[i],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// `(first n, rest)`.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Isotropic Gaussian clusters around seeded centres.
///
/// Centres are drawn uniformly from `[-1, 1]^dim`; example `i` belongs to
/// class `i % classes`, so any prefix is balanced to within one.
pub fn synthetic_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim == 0 {
        return Err(DataError::Invalid("need dim >= 1 and classes >= 2".into()));
    }
    if n < classes {
        return Err(DataError::Invalid(format!(
            "{n} examples cannot cover {classes} classes"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::Invalid(format!(
            "spread must be non-negative, got {spread}"
        )));
    }
    let mut r = rng::stream(seed, &[tag::DATA]);
    let centers: Vec<f64> = (0..classes * dim)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let z: f64 = r.sample(StandardNormal);
            features.push(centers[c * dim + j] + spread * z);
        }
        labels.push(c);
    }
    Dataset::new(features, dim, labels, classes)
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let s = bytes.get(at..at + 4).ok_or(DataError::Truncated {
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(s.try_into().unwrap()))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses IDX image bytes into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok((count, rows, cols, &bytes[16..expected]))
}

/// Parses IDX label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[8..expected])
}

/// Builds a dataset from IDX image and label bytes; pixels are scaled by
/// 1/255 and the class count is `max label + 1` (at least 2).
pub fn idx_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let dim = rows * cols;
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(features, dim.max(1), labels, classes)
}

/// Loads an IDX image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    idx_from_bytes(&images, &labels)
}

/// Encodes a dataset as IDX bytes. Features must be multiples of 1/255 in
/// `[0, 1]` to round-trip exactly; they are rounded to the nearest byte.
pub fn idx_to_bytes(data: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != data.dim() {
        return Err(DataError::Invalid(format!(
            "{rows}x{cols} images do not match dimension {}",
            data.dim()
        )));
    }
    if data.class_count() > 256 {
        return Err(DataError::Invalid("IDX labels are single bytes".into()));
    }
    let mut images = Vec::with_capacity(16 + data.features().len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(data.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend(
        data.features()
            .iter()
            .map(|&f| (f.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    labels.extend(data.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Writes a dataset as an IDX file pair.
pub fn write_idx(
    data: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = idx_to_bytes(data, rows, cols)?;
    for (path, bytes) in [
        (images_path.as_ref(), images),
        (labels_path.as_ref(), labels),
    ] {
        fs::write(path, bytes).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn parses_single_image() {
        let d = idx_from_bytes(
            &image_bytes(1, 2, 2, &[0, 255, 128, 64]),
            &label_bytes(&[3]),
        )
        .unwrap();
        assert_eq!(d.features(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(d.labels(), &[3]);
        assert_eq!(d.dim(), 4);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let mut bad = image_bytes(1, 2, 2, &[0, 0, 0, 0]);
        bad[3] = 0x01;
        assert!(matches!(
            idx_from_bytes(&bad, &label_bytes(&[0])),
            Err(DataError::BadMagic { found: 0x801, .. })
        ));
        assert!(matches!(
            idx_from_bytes(&image_bytes(1, 2, 2, &[0, 0, 0]), &label_bytes(&[0])),
            Err(DataError::Truncated {
                expected: 20,
                found: 19
            })
        ));
        assert!(matches!(
            idx_from_bytes(&image_bytes(1, 2, 2, &[0; 4]), &label_bytes(&[0, 1])),
            Err(DataError::CountMismatch {
                images: 1,
                labels: 2
            })
        ));
        assert!(matches!(
            idx_from_bytes(&[0, 0], &label_bytes(&[0])),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = synthetic_blobs(103, 4, 10, 0.5, 9).unwrap();
        let b = synthetic_blobs(103, 4, 10, 0.5, 9).unwrap();
        assert_eq!(a, b);
        let counts = a.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_ne!(a, synthetic_blobs(103, 4, 10, 0.5, 10).unwrap());
        assert!(synthetic_blobs(3, 4, 10, 0.5, 9).is_err());
        assert!(synthetic_blobs(30, 4, 10, -1.0, 9).is_err());
    }

    #[test]
    fn dataset_validation_and_slicing() {
        assert!(Dataset::new(vec![0.0; 5], 2, vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![0.0; 4], 2, vec![0, 2], 2).is_err());
        let d = Dataset::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, vec![0, 1, 0], 2).unwrap();
        let (h, t) = d.split_at(1);
        assert_eq!(h.row(0), &[1.0, 2.0]);
        assert_eq!(t.len(), 2);
        assert_eq!(d.subset(&[2, 0]).row(0), &[5.0, 6.0]);
        assert_eq!(d.prefix(10), d);
    }
}
