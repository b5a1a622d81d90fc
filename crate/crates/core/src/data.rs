//! Classification datasets: synthetic Gaussian blobs, CSV and IDX files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

/// Fraction of samples assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// One split: row-major features plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    /// Gathers the given rows into a `[batch, features]` tensor and labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.features);
        for &i in indices {
            x.extend_from_slice(self.sample(i));
        }
        let t = Tensor::new(vec![indices.len(), self.features], x).expect("consistent batch");
        (t, indices.iter().map(|&i| self.y[i]).collect())
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.features], self.x.clone()).expect("consistent split")
    }

    fn select(&self, indices: &[usize]) -> Split {
        let (t, y) = self.batch(indices);
        Split {
            features: self.features,
            x: t.into_data(),
            y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    /// `k` isotropic Gaussian clusters (one per class) with centres evenly
    /// spaced on a circle of `radius` in the first two feature dimensions.
    Blobs {
        k: usize,
        n: usize,
        sigma: f64,
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    /// Header `f0,…,fd,label`; split 80/20 after a seeded shuffle.
    Csv {
        path: PathBuf,
        #[serde(default)]
        seed: u64,
    },
    /// Big-endian IDX image/label pair, pixels scaled to `[0, 1]`.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        seed: u64,
    },
}

fn default_dim() -> usize {
    2
}

fn default_radius() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, tag: SplitTag) -> &Split {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Test => &self.test,
        }
    }

    pub fn features(&self) -> usize {
        self.train.features
    }

    /// Shuffles `all` with `seed` and keeps the first 80% for training.
    pub fn from_pool(all: Split, classes: usize, seed: u64) -> Result<Self> {
        if all.len() < 2 {
            return Err(DataError::Invalid(format!("need at least 2 samples, got {}", all.len())).into());
        }
        for (i, &y) in all.y.iter().enumerate() {
            if y >= classes {
                return Err(DataError::LabelOutOfRange {
                    index: i,
                    label: y,
                    classes,
                }
                .into());
            }
        }
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((all.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, all.len() - 1);
        Ok(Self {
            classes,
            train: all.select(&order[..cut]),
            test: all.select(&order[cut..]),
        })
    }
}

pub fn ingest(source: &Provenance) -> Result<Dataset> {
    match source {
        Provenance::Blobs {
            k,
            n,
            sigma,
            seed,
            dim,
            radius,
        } => blobs(*k, *n, *sigma, *seed, *dim, *radius),
        Provenance::Csv { path, seed } => {
            let (split, classes) = parse_csv(&fs::read(path).map_err(DataError::from)?)?;
            Dataset::from_pool(split, classes, *seed)
        }
        Provenance::Idx {
            images,
            labels,
            seed,
        } => {
            let split = read_idx_pair(images, labels)?;
            let classes = split.y.iter().max().map_or(0, |m| m + 1);
            Dataset::from_pool(split, classes, *seed)
        }
    }
}

pub fn blobs(k: usize, n: usize, sigma: f64, seed: u64, dim: usize, radius: f64) -> Result<Dataset> {
    if k < 2 || n < k || dim < 2 || !(sigma > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blobs need k >= 2, n >= k, dim >= 2, sigma > 0, radius > 0 (k={k}, n={n}, dim={dim}, sigma={sigma}, radius={radius})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k;
        let angle = 2.0 * std::f64::consts::PI * label as f64 / k as f64;
        for d in 0..dim {
            let centre = match d {
                0 => radius * angle.cos(),
                1 => radius * angle.sin(),
                _ => 0.0,
            };
            x.push(centre + noise.sample(&mut rng));
        }
        y.push(label);
    }
    let pool = Split { features: dim, x, y };
    Dataset::from_pool(pool, k, seed.wrapping_add(1))
}

/// Parses CSV bytes with header `f0,…,f{d-1},label`. Returns the samples
/// and the class count (largest label + 1).
pub fn parse_csv(bytes: &[u8]) -> Result<(Split, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let parse_err = |offset: u64, msg: String| DataError::Parse {
        offset: offset as usize,
        msg,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(0, e.to_string()))?
        .clone();
    let cols = headers.len();
    let features = cols.saturating_sub(1);
    let expected: Vec<String> = (0..features)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if features == 0 || headers.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(0, format!("header must be {}", expected.join(","))).into());
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let off = e.position().map_or(0, |p| p.byte());
            parse_err(off, e.to_string())
        })?;
        let off = rec.position().map_or(0, |p| p.byte());
        for (c, field) in rec.iter().enumerate().take(features) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(off, format!("column f{c}: '{field}' is not a number")))?;
            x.push(v);
        }
        let label = rec[features].trim();
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(off, format!("label '{label}' is not a class index")))?;
        y.push(label);
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    Ok((Split { features, x, y }, classes))
}

/// Header of an unsigned-byte IDX file: dimension sizes and data offset.
fn idx_header(bytes: &[u8], want_dims: u8) -> Result<(Vec<usize>, usize), DataError> {
    let err = |offset: usize, msg: String| DataError::Parse { offset, msg };
    if bytes.len() < 4 {
        return Err(err(0, "file shorter than the IDX magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(0, format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != 0x08 {
        return Err(err(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    if bytes[3] != want_dims {
        return Err(err(3, format!("expected {want_dims} dimensions, found {}", bytes[3])));
    }
    let mut dims = Vec::new();
    let mut off = 4;
    for _ in 0..want_dims {
        let chunk = bytes
            .get(off..off + 4)
            .ok_or_else(|| err(off, "header ends inside dimension list".into()))?;
        dims.push(u32::from_be_bytes(chunk.try_into().unwrap()) as usize);
        off += 4;
    }
    let need: usize = dims.iter().product();
    if bytes.len() - off != need {
        return Err(err(
            off,
            format!("expected {need} data bytes, found {}", bytes.len() - off),
        ));
    }
    Ok((dims, off))
}

/// Parses an IDX image file and label file already in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Split> {
    let (idims, ioff) = idx_header(images, 3)?;
    let (ldims, loff) = idx_header(labels, 1)?;
    if idims[0] != ldims[0] {
        return Err(DataError::Invalid(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        ))
        .into());
    }
    let features = idims[1] * idims[2];
    Ok(Split {
        features,
        x: images[ioff..].iter().map(|&b| f64::from(b) / 255.0).collect(),
        y: labels[loff..].iter().map(|&b| usize::from(b)).collect(),
    })
}

fn read_idx_pair(images: &Path, labels: &Path) -> Result<Split> {
    let i = fs::read(images).map_err(DataError::from)?;
    let l = fs::read(labels).map_err(DataError::from)?;
    parse_idx(&i, &l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_reproducible_and_disjoint() {
        let a = blobs(2, 1000, 0.5, 7, 2, 2.0).unwrap();
        let b = blobs(2, 1000, 0.5, 7, 2, 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 800);
        assert_eq!(a.test.len(), 200);
        assert!(a.train.y.iter().chain(&a.test.y).all(|&y| y < 2));
        let c = blobs(2, 1000, 0.5, 8, 2, 2.0).unwrap();
        assert_ne!(a.train.x, c.train.x);
    }

    #[test]
    fn blobs_validate_arguments() {
        assert!(blobs(1, 10, 0.5, 0, 2, 2.0).is_err());
        assert!(blobs(2, 10, 0.0, 0, 2, 2.0).is_err());
        assert!(blobs(3, 2, 0.5, 0, 2, 2.0).is_err());
    }

    #[test]
    fn csv_fixture() {
        let text = b"f0,f1,label\n0.5,-1,0\n2,3.25,1\n-0.125,0,2\n";
        let (split, classes) = parse_csv(text).unwrap();
        assert_eq!(classes, 3);
        assert_eq!(split.features, 2);
        assert_eq!(split.x, vec![0.5, -1.0, 2.0, 3.25, -0.125, 0.0]);
        assert_eq!(split.y, vec![0, 1, 2]);
    }

    #[test]
    fn csv_errors_carry_offsets() {
        let err = parse_csv(b"a,b,label\n1,2,0\n").unwrap_err();
        assert!(matches!(err, Error::Data(DataError::Parse { offset: 0, .. })));
        let err = parse_csv(b"f0,label\n1,0\nx,1\n").unwrap_err();
        match err {
            Error::Data(DataError::Parse { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv(b"f0,label\n1,-1\n").is_err());
    }

    #[test]
    fn label_range_is_checked() {
        let split = Split {
            features: 1,
            x: vec![0.0, 1.0],
            y: vec![0, 5],
        };
        assert!(matches!(
            Dataset::from_pool(split, 2, 0),
            Err(Error::Data(DataError::LabelOutOfRange { index: 1, label: 5, classes: 2 }))
        ));
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 0x08, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend([0, 255, 51, 102, 255, 255, 0, 0, 1, 2, 3, 4, 10, 20, 30, 40]);
        let labels = vec![0, 0, 0x08, 1, 0, 0, 0, 4, 3, 1, 4, 1];
        (images, labels)
    }

    #[test]
    fn idx_fixture_parses() {
        let (images, labels) = idx_fixture();
        let split = parse_idx(&images, &labels).unwrap();
        assert_eq!(split.features, 4);
        assert_eq!(split.len(), 4);
        assert_eq!(split.y, vec![3, 1, 4, 1]);
        assert_eq!(split.sample(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(split.sample(2)[3], 4.0 / 255.0);
    }

    #[test]
    fn idx_errors() {
        let (mut images, labels) = idx_fixture();
        images[2] = 0x0D;
        assert!(matches!(
            parse_idx(&images, &labels),
            Err(Error::Data(DataError::Parse { offset: 2, .. }))
        ));
        let (images, _) = idx_fixture();
        assert!(matches!(
            parse_idx(&images[..images.len() - 1], &labels),
            Err(Error::Data(DataError::Parse { offset: 16, .. }))
        ));
        let (images, mut labels) = idx_fixture();
        labels[0] = 1;
        assert!(matches!(
            parse_idx(&images, &labels),
            Err(Error::Data(DataError::Parse { offset: 0, .. }))
        ));
    }
}
