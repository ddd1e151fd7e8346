//! Classification datasets: Iris (CSV), MNIST (IDX) and CIFAR-10 (binary
//! batches).
//!
//! Features are stored as an `[n_samples, n_features]` matrix of `f64` and
//! labels as class indices. One-hot rows are only materialized on demand.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;
pub const CIFAR_CLASSES: usize = 10;

const IRIS_CLASSES: usize = 3;
const IRIS_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    feature_shape: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_shape: Option<(usize, usize, usize)>,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidArgument("n_classes must be positive".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if let Some((c, h, w)) = feature_shape {
            if c * h * w != features.ncols() {
                return Err(Error::Dimension(format!(
                    "feature shape {c}x{h}x{w} does not match {} features",
                    features.ncols()
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            feature_shape,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_shape(&self) -> Option<(usize, usize, usize)> {
        self.feature_shape
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::InvalidArgument(format!(
                "sample index {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            feature_shape: self.feature_shape,
        })
    }

    /// The first `n` samples (all of them if `n` exceeds the sample count).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.n_samples());
        let idx: Vec<usize> = (0..n).collect();
        self.select(&idx).expect("indices in range")
    }

    /// One-hot label matrix `[n_samples, n_classes]`.
    pub fn one_hot(&self) -> Array2<f64> {
        one_hot(&self.labels, self.n_classes).expect("labels validated at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.n_classes() != test.n_classes() {
            return Err(Error::Dimension(format!(
                "train has {} classes, test has {}",
                train.n_classes(),
                test.n_classes()
            )));
        }
        if train.n_features() != test.n_features() {
            return Err(Error::Dimension(format!(
                "train has {} features, test has {}",
                train.n_features(),
                test.n_features()
            )));
        }
        Ok(Self { train, test })
    }

    /// Standardize every feature to zero mean and unit variance using the
    /// training-split statistics, applied to both parts. Constant columns are
    /// only centered.
    pub fn standardized(self) -> Self {
        let mean = self
            .train
            .features
            .mean_axis(Axis(0))
            .expect("train split is non-empty");
        let std = self.train.features.std_axis(Axis(0), 0.0);
        let scale = std.mapv(|s| if s > 0.0 { s } else { 1.0 });
        let apply = |d: Dataset| Dataset {
            features: (&d.features - &mean) / &scale,
            ..d
        };
        Self {
            train: apply(self.train),
            test: apply(self.test),
        }
    }
}

fn parse_f64(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parse Iris CSV text: four numeric columns and a class column. A first row
/// whose first field is not numeric is treated as a header. Class strings
/// are mapped to indices in order of first appearance.
///
/// Features are returned raw; standardization happens after splitting (see
/// [`SplitDataset::standardized`]).
pub fn parse_iris(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<[f64; IRIS_FEATURES]> = Vec::new();
    let mut labels = Vec::new();
    let mut classes: Vec<String> = Vec::new();

    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("iris line {}: {e}", line + 1)))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rows.is_empty() && labels.is_empty() && line == 0 && parse_f64(&record[0]).is_none() {
            continue;
        }
        if record.len() != IRIS_FEATURES + 1 {
            return Err(Error::Parse(format!(
                "iris line {}: expected {} columns, found {}",
                line + 1,
                IRIS_FEATURES + 1,
                record.len()
            )));
        }
        let mut row = [0.0; IRIS_FEATURES];
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = parse_f64(&record[c]).ok_or_else(|| {
                Error::Parse(format!(
                    "iris line {}: column {} is not a finite number: {:?}",
                    line + 1,
                    c + 1,
                    &record[c]
                ))
            })?;
        }
        let class = &record[IRIS_FEATURES];
        if class.is_empty() {
            return Err(Error::Parse(format!("iris line {}: empty class", line + 1)));
        }
        let idx = match classes.iter().position(|c| c == class) {
            Some(i) => i,
            None if classes.len() < IRIS_CLASSES => {
                classes.push(class.to_string());
                classes.len() - 1
            }
            None => {
                return Err(Error::Parse(format!(
                    "iris line {}: unknown class {class:?} (already saw {classes:?})",
                    line + 1
                )))
            }
        };
        rows.push(row);
        labels.push(idx);
    }

    if rows.is_empty() {
        return Err(Error::Parse("iris file contains no samples".into()));
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((n, IRIS_FEATURES), flat).expect("shape matches");
    Dataset::new(features, labels, IRIS_CLASSES, None)
}

pub fn load_iris(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_iris(&text)
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("IDX header truncated at byte {offset}")))
}

/// Parse an IDX image file: returns `(n, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    if payload.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "IDX image payload is {} bytes, header declares {n}x{rows}x{cols}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, payload))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!(
            "IDX label payload is {} bytes, header declares {n}",
            payload.len()
        )));
    }
    Ok(payload)
}

pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let features = Array2::from_shape_vec(
        (n, rows * cols),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked");
    let labels = labels.iter().map(|&l| l as usize).collect();
    Dataset::new(features, labels, 10, Some((1, rows, cols)))
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    mnist_from_bytes(&images, &labels)
}

/// Decode concatenated CIFAR-10 binary records (label byte, then the R, G
/// and B planes of a 32x32 image).
pub fn cifar10_from_bytes(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!(
                "CIFAR-10 record {i}: label byte {label} >= {CIFAR_CLASSES}"
            )));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok((labels, pixels))
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (l, p) = cifar10_from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        labels.extend(l);
        pixels.extend(p);
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, CIFAR_PIXELS), pixels).expect("record size");
    Dataset::new(
        features,
        labels,
        CIFAR_CLASSES,
        Some((CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)),
    )
}

/// Seeded permutation split: the first `n_train` permuted indices go to
/// train, the rest to test.
pub fn split_indices(n_samples: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train >= n_samples {
        return Err(Error::InvalidArgument(format!(
            "n_train must lie in (0, {n_samples}), got {n_train}"
        )));
    }
    let mut idx: Vec<usize> = (0..n_samples).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, &[seed::stream::SPLIT])));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(d: &Dataset, n_train: usize, seed: u64) -> Result<SplitDataset> {
    let (train, test) = split_indices(d.n_samples(), n_train, seed)?;
    SplitDataset::new(d.select(&train)?, d.select(&test)?)
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::InvalidArgument(format!(
                "label {l} at position {i} out of range for {k} classes"
            )));
        }
        out[[i, l]] = 1.0;
    }
    Ok(out)
}

/// True when `train` and `test` partition `0..n` exactly.
pub fn is_partition(train: &[usize], test: &[usize], n: usize) -> bool {
    let a: HashSet<usize> = train.iter().copied().collect();
    let b: HashSet<usize> = test.iter().copied().collect();
    a.len() == train.len()
        && b.len() == test.len()
        && a.is_disjoint(&b)
        && a.len() + b.len() == n
        && a.iter().chain(b.iter()).all(|&i| i < n)
}
