//! Dense linear algebra, seeded randomness and small-sample statistics.

mod eigen;
mod matrix;
mod rng;
mod stats;

pub use eigen::{symmetric_eigenvalues, MAX_SWEEPS, OFF_DIAGONAL_TOLERANCE};
pub use matrix::DenseMatrix;
pub use rng::{gaussian_sample, RngStream};
pub use stats::{
    linear_fit, mann_whitney_greater, mean, pearson, ranks, sample_std, spearman, RankTest,
};

use serde::Serialize;

/// Eigenvalues sorted descending, plus the outcome of a cleaning rule.
///
/// `retained` indexes into `eigenvalues`; an uncleaned spectrum has an empty
/// retained set and a zero threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub threshold: f64,
    pub retained: Vec<usize>,
}

impl Spectrum {
    /// Wraps raw eigenvalues, sorting them descending.
    pub fn new(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|x, y| y.total_cmp(x));
        Self {
            eigenvalues,
            threshold: 0.0,
            retained: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn retained_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.retained.iter().map(|&i| self.eigenvalues[i])
    }

    pub fn is_retained(&self, index: usize) -> bool {
        self.retained.binary_search(&index).is_ok()
    }

    pub fn sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}
