//! Covariance of the minibatch gradient noise `η = ∇L_full − ∇L_batch`.
//!
//! Writing `C = ⟨g gᵀ⟩ − ⟨g⟩⟨g⟩ᵀ` for the centered second moment of the
//! per-sample data-loss gradients (averages over all `P` samples), a batch
//! of `b` samples drawn without replacement has
//!
//! * asymptotic covariance `(1/b)(1 − b/P)·C`, valid as `P → ∞`;
//! * exact covariance `(P − b)/(b(P − 1))·C` for every finite `P`.
//!
//! The ratio exact/asymptotic is `P/(P − 1)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, NetworkSpec, ParamVector};
use crate::numerics::{DenseMatrix, RngStream};

/// Largest number of batches [`noise_cov_enumerated`] will visit.
const MAX_ENUMERATED_BATCHES: u128 = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    PaperAsymptotic,
    ExactFiniteP,
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    pub matrix: DenseMatrix,
    pub batch_size: usize,
    pub sample_count: usize,
    pub kind: CovarianceKind,
    /// Scalar multiplying `C`; for empirical estimates, the number of
    /// batches averaged over.
    pub prefactor: f64,
}

/// `(1/P)Σ (gᵢ − ḡ)(gᵢ − ḡ)ᵀ`, algebraically `⟨g gᵀ⟩ − ⟨g⟩⟨g⟩ᵀ`.
pub fn centered_second_moment(grads: &[ParamVector]) -> Result<DenseMatrix> {
    let Some(first) = grads.first() else {
        return Err(Error::InvalidArgument("no gradients".into()));
    };
    let n = first.len();
    if grads.iter().any(|g| g.len() != n) {
        return Err(Error::Dimension("gradients of unequal length".into()));
    }
    let p = grads.len() as f64;
    let mut mean = vec![0.0; n];
    for g in grads {
        for (m, v) in mean.iter_mut().zip(g.iter()) {
            *m += v / p;
        }
    }
    let mut c = DenseMatrix::zeros(n, n);
    let mut d = vec![0.0; n];
    for g in grads {
        for ((di, gi), mi) in d.iter_mut().zip(g.iter()).zip(&mean) {
            *di = gi - mi;
        }
        add_outer_upper(&mut c, &d, 1.0 / p);
    }
    mirror_upper(&mut c);
    Ok(c)
}

fn add_outer_upper(c: &mut DenseMatrix, d: &[f64], w: f64) {
    let n = d.len();
    let data = c.as_mut_slice();
    for i in 0..n {
        let di = w * d[i];
        if di == 0.0 {
            continue;
        }
        for j in i..n {
            data[i * n + j] += di * d[j];
        }
    }
}

fn mirror_upper(c: &mut DenseMatrix) {
    let n = c.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            c[(j, i)] = c[(i, j)];
        }
    }
}

fn check_batch(data: &Dataset, b: usize) -> Result<()> {
    if b == 0 || b > data.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {b} outside 1..={}",
            data.len()
        )));
    }
    Ok(())
}

fn scaled_moment(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    b: usize,
    kind: CovarianceKind,
    prefactor: f64,
) -> Result<NoiseCovariance> {
    check_batch(data, b)?;
    let grads = model::per_sample_gradients(spec, theta, data)?;
    let c = centered_second_moment(&grads)?;
    Ok(NoiseCovariance {
        matrix: c.scale(prefactor),
        batch_size: b,
        sample_count: data.len(),
        kind,
        prefactor,
    })
}

/// Large-`P` form `(1/b)(1 − b/P)·C`.
pub fn noise_cov_theoretical(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    b: usize,
) -> Result<NoiseCovariance> {
    let p = data.len() as f64;
    let bf = b as f64;
    let prefactor = (1.0 - bf / p) / bf;
    scaled_moment(spec, theta, data, b, CovarianceKind::PaperAsymptotic, prefactor)
}

/// Exact without-replacement form `(P − b)/(b(P − 1))·C`; zero when `P = 1`.
pub fn noise_cov_exact(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    b: usize,
) -> Result<NoiseCovariance> {
    let p = data.len() as f64;
    let bf = b as f64;
    let prefactor = if data.len() == 1 {
        0.0
    } else {
        (p - bf) / (bf * (p - 1.0))
    };
    scaled_moment(spec, theta, data, b, CovarianceKind::ExactFiniteP, prefactor)
}

/// Accumulates `(ḡ − g_B)(ḡ − g_B)ᵀ` for each batch produced by `next`.
fn accumulate_batches(
    grads: &[ParamVector],
    mut next: impl FnMut(&mut Vec<usize>) -> bool,
) -> (DenseMatrix, usize) {
    let n = grads[0].len();
    let p = grads.len() as f64;
    let mut full = vec![0.0; n];
    for g in grads {
        for (f, v) in full.iter_mut().zip(g.iter()) {
            *f += v / p;
        }
    }
    let mut cov = DenseMatrix::zeros(n, n);
    let mut batch = Vec::new();
    let mut d = vec![0.0; n];
    let mut count = 0;
    while next(&mut batch) {
        let bf = batch.len() as f64;
        d.copy_from_slice(&full);
        for &i in &batch {
            for (di, v) in d.iter_mut().zip(grads[i].iter()) {
                *di -= v / bf;
            }
        }
        add_outer_upper(&mut cov, &d, 1.0);
        count += 1;
    }
    mirror_upper(&mut cov);
    (cov.scale(1.0 / count as f64), count)
}

/// Monte-Carlo estimate over `draws` uniformly random batches drawn without
/// replacement. The noise has known mean zero, so the estimator is
/// `(1/draws)·Σ d dᵀ`.
pub fn noise_cov_empirical(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    b: usize,
    draws: usize,
    rng: &mut RngStream,
) -> Result<NoiseCovariance> {
    check_batch(data, b)?;
    if draws < 2 {
        return Err(Error::InvalidArgument(format!("{draws} draws; need at least 2")));
    }
    let grads = model::per_sample_gradients(spec, theta, data)?;
    let p = data.len();
    let mut remaining = draws;
    let (matrix, count) = accumulate_batches(&grads, |batch| {
        if remaining == 0 {
            return false;
        }
        remaining -= 1;
        *batch = rng.sample_indices(p, b);
        batch.sort_unstable();
        true
    });
    Ok(NoiseCovariance {
        matrix,
        batch_size: b,
        sample_count: p,
        kind: CovarianceKind::Empirical,
        prefactor: count as f64,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact average over every one of the `C(P, b)` batches, each weighted
/// equally.
pub fn noise_cov_enumerated(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    b: usize,
) -> Result<NoiseCovariance> {
    check_batch(data, b)?;
    let p = data.len();
    let total = binomial(p, b);
    if total > MAX_ENUMERATED_BATCHES {
        return Err(Error::InvalidArgument(format!(
            "{total} batches are too many to enumerate"
        )));
    }
    let grads = model::per_sample_gradients(spec, theta, data)?;
    let mut current: Option<Vec<usize>> = None;
    let (matrix, count) = accumulate_batches(&grads, |batch| {
        let next = match current.take() {
            None => (0..b).collect::<Vec<_>>(),
            Some(mut c) => {
                // Lexicographic successor of a b-combination of 0..p.
                let Some(i) = (0..b).rev().find(|&i| c[i] < p - b + i) else {
                    return false;
                };
                c[i] += 1;
                for j in (i + 1)..b {
                    c[j] = c[j - 1] + 1;
                }
                c
            }
        };
        batch.clone_from(&next);
        current = Some(next);
        true
    });
    debug_assert_eq!(count as u128, total);
    Ok(NoiseCovariance {
        matrix,
        batch_size: b,
        sample_count: p,
        kind: CovarianceKind::Empirical,
        prefactor: count as f64,
    })
}

#[derive(Serialize)]
struct CovarianceHeader {
    kind: CovarianceKind,
    b: usize,
    #[serde(rename = "P")]
    p: usize,
    prefactor: f64,
    dimension: usize,
}

/// Writes the matrix as headerless CSV (one row per line) and a JSON header
/// `{kind, b, P, prefactor, dimension}`.
pub fn write_covariance(
    cov: &NoiseCovariance,
    csv: &mut impl Write,
    json: &mut impl Write,
) -> Result<()> {
    let m = &cov.matrix;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(csv, "{}", row.join(","))?;
    }
    let header = CovarianceHeader {
        kind: cov.kind,
        b: cov.batch_size,
        p: cov.sample_count,
        prefactor: cov.prefactor,
        dimension: m.rows(),
    };
    serde_json::to_writer_pretty(&mut *json, &header)
        .map_err(|e| Error::Format(e.to_string()))?;
    writeln!(json)?;
    Ok(())
}
