//! Finite-difference Hessians, spectrum cleaning, and the thermodynamic
//! summary (energy `u`, prior term `h`, entropy `s`, free energy `F`) of a
//! critical point.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, NetworkSpec, ParamVector};
use crate::numerics::{DenseMatrix, Spectrum};

/// Largest parameter count [`hessian_fd`] accepts by default.
pub const DEFAULT_HESSIAN_CAP: usize = 2000;
/// Relative finite-difference step: εᵢ = `FD_STEP`·max(1, |θᵢ|).
pub const FD_STEP: f64 = 1e-4;

/// Central differences of the analytic gradient, before symmetrization.
///
/// Column `j` is `(∇L(θ + εⱼeⱼ) − ∇L(θ − εⱼeⱼ)) / 2εⱼ`. Columns are evaluated
/// in parallel and assembled in index order, so the result does not depend
/// on the thread count. The regularizer contributes λ·I.
pub fn hessian_fd_raw(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    cap: usize,
) -> Result<DenseMatrix> {
    spec.check_params(theta)?;
    data.check_for(spec)?;
    let n = theta.len();
    if n > cap {
        return Err(Error::HessianCap { n, cap });
    }
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let step = FD_STEP * theta[j].abs().max(1.0);
            let mut probe = theta.clone();
            probe[j] = theta[j] + step;
            let plus = model::gradient(spec, &probe, data)?;
            probe[j] = theta[j] - step;
            let minus = model::gradient(spec, &probe, data)?;
            Ok(plus
                .iter()
                .zip(minus.iter())
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect())
        })
        .collect::<Result<_>>()?;
    let h = DenseMatrix::from_fn(n, n, |i, j| columns[j][i]);
    if !h.all_finite() {
        return Err(Error::NonFinite("finite-difference Hessian"));
    }
    Ok(h)
}

/// Symmetrized finite-difference Hessian of [`model::loss`].
pub fn hessian_fd(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<DenseMatrix> {
    let mut h = hessian_fd_raw(spec, theta, data, DEFAULT_HESSIAN_CAP)?;
    h.symmetrize();
    Ok(h)
}

/// Drops every eigenvalue not exceeding the magnitude of the most negative
/// one. With no negative eigenvalues the threshold is 0 and all positive
/// eigenvalues survive.
pub fn clean_spectrum_negmag(spectrum: &Spectrum) -> Spectrum {
    let most_negative = spectrum
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0f64, f64::min);
    let threshold = -most_negative;
    let retained = spectrum
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i)
        .collect();
    Spectrum {
        eigenvalues: spectrum.eigenvalues.clone(),
        threshold,
        retained,
    }
}

/// Keeps the `k` largest eigenvalues; the threshold records the (k+1)-th
/// value, or 0 when everything is kept.
pub fn clean_spectrum_topk(spectrum: &Spectrum, k: usize) -> Result<Spectrum> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k cleaning needs k ≥ 1".into()));
    }
    if k > spectrum.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {} eigenvalues",
            spectrum.len()
        )));
    }
    Ok(Spectrum {
        eigenvalues: spectrum.eigenvalues.clone(),
        threshold: spectrum.eigenvalues.get(k).copied().unwrap_or(0.0),
        retained: (0..k).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Entropy {
    /// `s = −(1/2N)·Σ log λ` over the retained eigenvalues.
    pub s: f64,
    /// `Σ log λ` over the retained eigenvalues.
    pub log_sum: f64,
}

/// Entropy of a cleaned spectrum, normalized by the total parameter count.
pub fn entropy(spectrum: &Spectrum, n_total: usize) -> Result<Entropy> {
    if spectrum.retained.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    if n_total == 0 {
        return Err(Error::InvalidArgument("zero parameter count".into()));
    }
    let mut log_sum = 0.0;
    for &i in &spectrum.retained {
        let v = spectrum.eigenvalues[i];
        if !(v > 0.0) {
            return Err(Error::NonPositiveEigenvalue { index: i, value: v });
        }
        log_sum += v.ln();
    }
    Ok(Entropy {
        s: -log_sum / (2.0 * n_total as f64),
        log_sum,
    })
}

/// Thermodynamic summary of one critical point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermoReport {
    pub u: f64,
    pub h: f64,
    pub s: f64,
    pub log_sum: f64,
    pub free_energy: f64,
    pub alpha: f64,
    pub trace: f64,
    pub retained_count: usize,
}

impl ThermoReport {
    /// Assembles a report, deriving `F = u + (h − s)/α`.
    pub fn new(u: f64, h: f64, entropy: Entropy, alpha: f64, trace: f64, retained_count: usize) -> Self {
        Self {
            u,
            h,
            s: entropy.s,
            log_sum: entropy.log_sum,
            free_energy: free_energy(u, h, entropy.s, alpha),
            alpha,
            trace,
            retained_count,
        }
    }
}

pub fn free_energy(u: f64, h: f64, s: f64, alpha: f64) -> f64 {
    u + (h - s) / alpha
}

/// `u`, `h`, `s` and `F` at `theta` from an already-cleaned spectrum.
///
/// `u` is the mean per-sample training loss: `(1/P)Σ(f − y)²/2` for the
/// half-quadratic loss (unit noise scale), the mean cross-entropy for
/// classifiers. `h = (λ/N)·‖θ‖²/2` and `α = P/N`.
pub fn thermo(
    spec: &NetworkSpec,
    theta: &ParamVector,
    train: &Dataset,
    spectrum: &Spectrum,
) -> Result<ThermoReport> {
    let n = spec.n_params();
    if spectrum.len() != n {
        return Err(Error::Dimension(format!(
            "{} eigenvalues for {n} parameters",
            spectrum.len()
        )));
    }
    let u = model::mean_data_loss(spec, theta, train)?;
    let h = spec.l2_lambda() / n as f64 * theta.norm_sq() / 2.0;
    let ent = entropy(spectrum, n)?;
    let alpha = train.len() as f64 / n as f64;
    Ok(ThermoReport::new(
        u,
        h,
        ent,
        alpha,
        spectrum.sum(),
        spectrum.retained.len(),
    ))
}

/// Writes `index,eigenvalue,retained,threshold` rows.
pub fn write_spectrum_csv(out: &mut impl Write, spectrum: &Spectrum) -> Result<()> {
    writeln!(out, "index,eigenvalue,retained,threshold")?;
    for (i, v) in spectrum.eigenvalues.iter().enumerate() {
        writeln!(
            out,
            "{i},{v:e},{},{:e}",
            spectrum.is_retained(i) as u8,
            spectrum.threshold
        )?;
    }
    Ok(())
}
