//! Binary image-batch ingestion, 10×10 grayscale features, train/test
//! splits, and a synthetic two-blob task for offline runs.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::numerics::{DenseMatrix, RngStream};

pub const IMAGE_SIDE: usize = 32;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE * 3;
pub const RECORD_LEN: usize = PIXELS + 1;
pub const FEATURE_SIDE: usize = 10;
pub const FEATURES: usize = FEATURE_SIDE * FEATURE_SIDE;
pub const CLASS_COUNT: u8 = 10;

const CACHE_MAGIC: [u8; 4] = *b"LSDS";

/// Stream used for dataset draws and split shuffles, away from the per-run
/// streams `0, 1, 2, …`.
pub const DATA_STREAM: u64 = u64::MAX - 1;

/// One labelled 32×32 RGB image: the red plane, then green, then blue, each
/// row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RawImageRecord {
    pub label: u8,
    pub pixels: Box<[u8; PIXELS]>,
}

impl std::fmt::Debug for RawImageRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RawImageRecord").field("label", &self.label).finish_non_exhaustive()
    }
}

impl RawImageRecord {
    pub fn new(label: u8, pixels: [u8; PIXELS]) -> Result<Self> {
        if label >= CLASS_COUNT {
            return Err(Error::InvalidLabel { label, offset: 0 });
        }
        Ok(Self { label, pixels: Box::new(pixels) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_LEN);
        out.push(self.label);
        out.extend_from_slice(&self.pixels[..]);
        out
    }
}

/// Parses concatenated 3073-byte records.
pub fn parse_cifar_batch(bytes: &[u8]) -> Result<Vec<RawImageRecord>> {
    let whole = bytes.len() / RECORD_LEN * RECORD_LEN;
    if whole != bytes.len() {
        return Err(Error::Truncated { offset: whole as u64 });
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            let label = chunk[0];
            if label >= CLASS_COUNT {
                return Err(Error::InvalidLabel { label, offset: (i * RECORD_LEN) as u64 });
            }
            let mut pixels = Box::new([0u8; PIXELS]);
            pixels.copy_from_slice(&chunk[1..]);
            Ok(RawImageRecord { label, pixels })
        })
        .collect()
}

pub fn load_cifar_batch(path: &Path) -> Result<Vec<RawImageRecord>> {
    parse_cifar_batch(&fs::read(path)?)
}

pub fn write_cifar_batch(path: &Path, records: &[RawImageRecord]) -> Result<()> {
    let mut bytes = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        bytes.extend_from_slice(&r.to_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Box-filter weights taking `IMAGE_SIDE` source cells onto `FEATURE_SIDE`
/// outputs: `w[o][i]` is the overlap of source cell `[i, i+1)` with output
/// cell `[3.2·o, 3.2·(o+1))`, divided by 3.2. Each row sums to 1.
pub fn downsample_kernel() -> [[f64; IMAGE_SIDE]; FEATURE_SIDE] {
    let ratio = IMAGE_SIDE as f64 / FEATURE_SIDE as f64;
    let mut w = [[0.0; IMAGE_SIDE]; FEATURE_SIDE];
    for (o, row) in w.iter_mut().enumerate() {
        let lo = o as f64 * ratio;
        let hi = lo + ratio;
        for (i, v) in row.iter_mut().enumerate() {
            let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
            *v = overlap / ratio;
        }
    }
    w
}

/// Grayscale as the unweighted RGB mean scaled to `[0, 1]`, then
/// area-averaged from 32×32 to 10×10. Output is row-major.
pub fn downsample_gray(rec: &RawImageRecord) -> [f64; FEATURES] {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let gray: Vec<f64> = (0..plane)
        .map(|p| {
            let sum = rec.pixels[p] as f64 + rec.pixels[plane + p] as f64 + rec.pixels[2 * plane + p] as f64;
            sum / (3.0 * 255.0)
        })
        .collect();
    let k = downsample_kernel();
    let mut out = [0.0; FEATURES];
    for (r, kr) in k.iter().enumerate() {
        for (c, kc) in k.iter().enumerate() {
            let mut acc = 0.0;
            for (i, wr) in kr.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                for (j, wc) in kc.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                    acc += wr * wc * gray[i * IMAGE_SIDE + j];
                }
            }
            out[r * FEATURE_SIDE + c] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitConfig {
    pub classes: (u8, u8),
    /// Total training samples, split evenly between the two classes.
    pub n_train: usize,
    /// Total test samples, split evenly between the two classes.
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { classes: (0, 1), n_train: 500, n_test: 2000, seed: 0 }
    }
}

fn per_class(total: usize, what: &str) -> Result<[usize; 2]> {
    if !total.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("{what} size {total} is not even")));
    }
    Ok([total / 2, total / 2])
}

fn build(records: &[&RawImageRecord], first: u8) -> Dataset {
    let mut rows = Vec::with_capacity(records.len() * FEATURES);
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        rows.extend_from_slice(&downsample_gray(r));
        labels.push(if r.label == first { 0.0 } else { 1.0 });
    }
    let x = DenseMatrix::from_vec(records.len(), FEATURES, rows).expect("features are finite");
    Dataset::new(x, labels).expect("labels match rows")
}

/// Keeps the two requested classes (relabelled 0 and 1), shuffles each with
/// stream [`DATA_STREAM`] of `cfg.seed`, and takes class-balanced disjoint train and test
/// sets. The combined sets are then shuffled once more so classes interleave.
pub fn make_split(records: &[RawImageRecord], cfg: &SplitConfig) -> Result<(Dataset, Dataset)> {
    let (a, b) = cfg.classes;
    if a == b || a >= CLASS_COUNT || b >= CLASS_COUNT {
        return Err(Error::InvalidArgument(format!("class pair ({a}, {b})")));
    }
    let train_n = per_class(cfg.n_train, "train")?;
    let test_n = per_class(cfg.n_test, "test")?;
    let mut rng = RngStream::new(cfg.seed, DATA_STREAM);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, label) in [a, b].into_iter().enumerate() {
        let mut pool: Vec<&RawImageRecord> = records.iter().filter(|r| r.label == label).collect();
        let need = train_n[k] + test_n[k];
        if pool.len() < need {
            return Err(Error::InsufficientSamples(format!(
                "class {label}: {} records, need {need}",
                pool.len()
            )));
        }
        rng.shuffle(&mut pool);
        train.extend_from_slice(&pool[..train_n[k]]);
        test.extend_from_slice(&pool[train_n[k]..need]);
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut test);
    Ok((build(&train, a), build(&test, a)))
}

/// Two unit-variance Gaussian blobs centred at `∓(separation/2)·u` for a
/// random unit vector `u`; label 0 sits at `−u`. Both sets are balanced and
/// shuffled; the test set has the same size as the training set.
pub fn synthetic_classification(
    n_features: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_features == 0 || n_per_class == 0 {
        return Err(Error::InvalidArgument("features and samples must be ≥ 1".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation {separation}")));
    }
    let mut rng = RngStream::new(seed, DATA_STREAM);
    let mut u: Vec<f64> = (0..n_features).map(|_| rng.standard_normal()).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let draw = |rng: &mut RngStream| {
        let mut order: Vec<usize> = (0..2 * n_per_class).collect();
        rng.shuffle(&mut order);
        let mut rows = vec![0.0; order.len() * n_features];
        let mut labels = vec![0.0; order.len()];
        for (slot, &k) in order.iter().enumerate() {
            let class = k % 2;
            let sign = if class == 0 { -0.5 } else { 0.5 };
            for (f, ui) in u.iter().enumerate() {
                rows[slot * n_features + f] = sign * separation * ui + rng.standard_normal();
            }
            labels[slot] = class as f64;
        }
        Dataset::new(DenseMatrix::from_vec(order.len(), n_features, rows).expect("finite draws"), labels)
    };
    let train = draw(&mut rng)?;
    let test = draw(&mut rng)?;
    Ok((train, test))
}

/// Cache layout, little-endian: `"LSDS"`, u64 sample count, u64 feature
/// count, then `count·features` f64 values row-major, then one label byte
/// per sample.
pub fn write_dataset_cache(out: &mut impl Write, data: &Dataset) -> Result<()> {
    if !data.is_binary() {
        return Err(Error::InvalidArgument("cache stores 0/1 labels only".into()));
    }
    out.write_all(&CACHE_MAGIC)?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    out.write_all(&(data.n_features() as u64).to_le_bytes())?;
    for v in data.inputs().as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    let labels: Vec<u8> = data.targets().iter().map(|&t| t as u8).collect();
    out.write_all(&labels)?;
    Ok(())
}

pub fn read_dataset_cache(input: &mut impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let truncated = |offset: usize| Error::Truncated { offset: offset as u64 };
    if bytes.len() < 20 {
        return Err(truncated(bytes.len()));
    }
    if bytes[..4] != CACHE_MAGIC {
        return Err(Error::Format("not a dataset cache".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let features = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let n_values = count
        .checked_mul(features)
        .ok_or_else(|| Error::Format("header counts overflow".into()))?;
    let body = 20 + n_values * 8;
    if bytes.len() < body + count {
        return Err(truncated(bytes.len()));
    }
    if bytes.len() > body + count {
        return Err(Error::Format("trailing bytes after cache body".into()));
    }
    let values = bytes[20..body]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut labels = Vec::with_capacity(count);
    for (i, &b) in bytes[body..].iter().enumerate() {
        if b > 1 {
            return Err(Error::InvalidLabel { label: b, offset: (body + i) as u64 });
        }
        labels.push(b as f64);
    }
    Dataset::new(DenseMatrix::from_vec(count, features, values)?, labels)
}
