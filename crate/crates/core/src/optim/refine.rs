use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, NetworkSpec, ParamVector};

pub const DEFAULT_REFINE_TOLERANCE: f64 = 3e-5;
pub const DEFAULT_REFINE_MAX_ITERS: usize = 200_000;

const ARMIJO: f64 = 1e-4;
const GROWTH: f64 = 1.25;
const MIN_STEP: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineOutcome {
    #[serde(skip)]
    pub theta: ParamVector,
    pub grad_inf_norm: f64,
    pub loss: f64,
    pub iterations: usize,
    /// ‖∇‖_∞ < tolerance was reached. An unconverged outcome still carries
    /// the best point found.
    pub converged: bool,
}

/// Steepest descent on the full-batch objective until ‖∇‖_∞ < `tolerance`.
///
/// A trial step `θ − a·∇` is accepted when it satisfies the Armijo condition
/// `f(θ') ≤ f(θ) − 1e-4·a·‖∇‖²`; otherwise `a` is halved and the trial
/// repeated. After an accepted step `a` grows by 1.25. Stops unconverged
/// after `max_iters` accepted-or-rejected trials or if `a` underflows.
pub fn refine(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    tolerance: f64,
    initial_step: f64,
    max_iters: usize,
) -> Result<RefineOutcome> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument("refine tolerance must be positive".into()));
    }
    if !(initial_step > 0.0) {
        return Err(Error::InvalidArgument("initial step must be positive".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut theta = theta.clone();
    let (mut f, mut g) = model::batch_objective(spec, &theta, data, &all)?;
    let mut step = initial_step;
    let mut iterations = 0;
    while g.inf_norm() >= tolerance && iterations < max_iters && step > MIN_STEP {
        iterations += 1;
        let mut trial = theta.clone();
        trial.axpy(-step, &g);
        let g_sq = g.norm_sq();
        match model::batch_objective(spec, &trial, data, &all) {
            Ok((f_new, g_new)) if f_new <= f - ARMIJO * step * g_sq => {
                theta = trial;
                f = f_new;
                g = g_new;
                step *= GROWTH;
            }
            Ok(_) | Err(Error::NonFinite(_)) => step *= 0.5,
            Err(e) => return Err(e),
        }
    }
    let grad_inf_norm = g.inf_norm();
    Ok(RefineOutcome {
        theta,
        grad_inf_norm,
        loss: f,
        iterations,
        converged: grad_inf_norm < tolerance,
    })
}
