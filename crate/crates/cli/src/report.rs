//! Per-run rows, histograms and summary statistics.
//!
//! Floats are written with `{:e}`, which is the shortest representation that
//! parses back to the same `f64`, so statistics recomputed from a CSV match
//! the JSON summaries exactly.

use std::collections::BTreeMap;

use serde::Serialize;

use landscape_core::numerics::{mean, sample_std};

/// Outcome of one train → refine → Hessian → entropy pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub algorithm: String,
    pub converged: bool,
    pub diverged: bool,
    pub grad_inf_norm: f64,
    /// Mean training loss `u`.
    pub train_loss: f64,
    pub train_error: f64,
    pub test_error: f64,
    pub h: f64,
    pub s: f64,
    pub log_sum: f64,
    pub free_energy: f64,
    pub alpha: f64,
    pub trace: f64,
    pub retained: usize,
    /// Excluded from the CSV so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

pub const RUN_HEADER: &str = "run,seed,algorithm,converged,diverged,grad_inf_norm,train_loss,train_error,test_error,h,s,log_sum,free_energy,alpha,trace,retained";

impl RunReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.run,
            self.seed,
            self.algorithm,
            self.converged,
            self.diverged,
            self.grad_inf_norm,
            self.train_loss,
            self.train_error,
            self.test_error,
            self.h,
            self.s,
            self.log_sum,
            self.free_energy,
            self.alpha,
            self.trace,
            self.retained,
        )
    }

    /// Usable for ensemble statistics: converged, not diverged, finite `s`.
    pub fn usable(&self) -> bool {
        self.converged && !self.diverged && self.s.is_finite()
    }
}

pub fn runs_csv(rows: &[RunReport]) -> String {
    let mut out = String::from(RUN_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Wall time per algorithm, in run order. Kept out of the CSV files, which
/// must be byte-identical across reruns.
pub fn wall_seconds(rows: &[RunReport]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.algorithm.clone()).or_default().push((r.wall_seconds * 1e3).round() / 1e3);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            n: xs.len(),
            mean: (!xs.is_empty()).then(|| mean(xs)),
            std: (xs.len() >= 2).then(|| sample_std(xs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bins {
    pub edges: Vec<f64>,
    pub rule: &'static str,
}

const FALLBACK_BINS: usize = 10;
const MAX_BINS: usize = 1000;

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Freedman–Diaconis bin edges over the finite values, width
/// `2·IQR·n^(-1/3)`. Falls back to 10 equal bins when the IQR is zero or the
/// rule would give more than 1000 bins; a zero range gets one unit-wide bin.
pub fn histogram_bins(values: &[f64]) -> Bins {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Bins { edges: vec![], rule: "empty" };
    }
    let (lo, hi) = (v[0], v[v.len() - 1]);
    if lo == hi {
        return Bins { edges: vec![lo - 0.5, hi + 0.5], rule: "degenerate" };
    }
    let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
    let width = 2.0 * iqr / (v.len() as f64).cbrt();
    let fd_bins = ((hi - lo) / width).ceil();
    let (count, rule) = if width > 0.0 && fd_bins.is_finite() && fd_bins <= MAX_BINS as f64 {
        (fd_bins.max(1.0) as usize, "freedman-diaconis")
    } else {
        (FALLBACK_BINS, "fixed-10")
    };
    let step = (hi - lo) / count as f64;
    let mut edges: Vec<f64> = (0..count).map(|i| lo + i as f64 * step).collect();
    edges.push(hi);
    Bins { edges, rule }
}

/// Counts per bin; the last bin is closed on the right.
pub fn histogram_counts(bins: &Bins, values: &[f64]) -> Vec<usize> {
    let n = bins.edges.len().saturating_sub(1);
    let mut counts = vec![0; n];
    for &x in values.iter().filter(|x| x.is_finite()) {
        if n == 0 || x < bins.edges[0] || x > bins.edges[n] {
            continue;
        }
        let k = bins.edges[1..n].partition_point(|&e| e <= x);
        counts[k] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_rule_and_fallback() {
        let xs: Vec<f64> = (0..8).map(f64::from).collect();
        let b = histogram_bins(&xs);
        // IQR = 3.5, width = 7/2 = 3.5, range 7 → 2 bins
        assert_eq!(b.rule, "freedman-diaconis");
        assert_eq!(b.edges, vec![0.0, 3.5, 7.0]);
        assert_eq!(histogram_counts(&b, &xs), vec![4, 4]);
        let spiky = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let b = histogram_bins(&spiky);
        assert_eq!(b.rule, "fixed-10");
        assert_eq!(b.edges.len(), 11);
        assert_eq!(histogram_counts(&b, &spiky).iter().sum::<usize>(), 6);
        let flat = histogram_bins(&[2.0, 2.0]);
        assert_eq!(histogram_counts(&flat, &[2.0, 2.0]), vec![2]);
        assert!(histogram_bins(&[f64::NAN]).edges.is_empty());
    }

    #[test]
    fn rows_round_trip_floats() {
        let r = RunReport {
            run: 3,
            seed: 9,
            algorithm: "sgd".into(),
            converged: true,
            diverged: false,
            grad_inf_norm: 1.0 / 3.0,
            train_loss: 0.1,
            train_error: 0.0,
            test_error: 0.25,
            h: 1e-7,
            s: 2.5,
            log_sum: -1.0,
            free_energy: 4.0,
            alpha: 0.5,
            trace: 3.0,
            retained: 10,
            wall_seconds: 1.0,
        };
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), RUN_HEADER.split(',').count());
        let g: f64 = row.split(',').nth(5).unwrap().parse().unwrap();
        assert_eq!(g, 1.0 / 3.0);
    }
}
