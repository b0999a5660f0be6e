//! `linear-suite`: balanced and imbalanced student ensembles on one teacher.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use landscape_core::linear_net::{run_ensemble, Balance, LinearRunRecord, LinearSuiteConfig, TeacherConfig};
use landscape_core::numerics::{linear_fit, pearson, spearman};

use crate::config::{KeySpec, Settings};
use crate::{write_file, write_json, CliError, Outcome};

/// More than this fraction of unconverged runs flags the experiment.
pub const MAX_UNCONVERGED_FRACTION: f64 = 0.2;

const KEYS: &[KeySpec] = &[
    ("n_input", "10", "10", "input dimension N_i"),
    ("n_hidden", "7", "7", "hidden units N_h"),
    ("n_samples", "5", "5", "training samples P"),
    ("noise_std", "1e-4", "1e-4", "label noise σ_e"),
    ("runs", "50", "50", "students per ensemble"),
    ("init_std", "1", "1", "std of the Gaussian weights before balancing"),
    ("learning_rate", "0.01", "0.01", "SGD step size, capped for stability"),
    ("batch_size", "1", "1", "SGD minibatch size"),
    ("steps", "50000", "50000", "SGD steps"),
    ("refine_tolerance", "1e-10", "1e-10", "steepest-descent stop: max-abs gradient"),
    ("refine_max_iters", "200000", "200000", "steepest-descent iteration cap"),
    ("fd_check", "true", "true", "also compute the finite-difference Hessian trace"),
    ("asymmetry_min", "1", "1", "imbalanced ensemble: smallest layer-scale factor"),
    ("asymmetry_max", "100", "100", "imbalanced ensemble: largest layer-scale factor"),
    ("seed", "0", "0", "teacher and data seed; student i uses stream i"),
];

pub fn schema() -> Vec<KeySpec> {
    KEYS.to_vec()
}

/// Correlations over the converged runs of one ensemble. `None` marks an
/// undefined statistic (too few runs or zero variance).
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub converged: usize,
    pub diverged: usize,
    pub corr_entropy_eg: Option<f64>,
    pub spearman_neg_log_trace_entropy: Option<f64>,
    pub corr_product_norm_eg: Option<f64>,
    pub fit_eg_vs_product_norm_slope: Option<f64>,
    pub fit_eg_vs_product_norm_intercept: Option<f64>,
    pub max_trace_relative_error: Option<f64>,
    pub max_invariant_drift: f64,
}

pub fn summarize(records: &[LinearRunRecord]) -> EnsembleSummary {
    let ok: Vec<&LinearRunRecord> = records.iter().filter(|r| r.converged && r.entropy.is_finite()).collect();
    let col = |f: fn(&LinearRunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (s, eg, pn) = (col(|r| r.entropy), col(|r| r.eg_actual), col(|r| r.product_norm_sq));
    let neg_log_tr = col(|r| -r.trace_formula.ln());
    let fit = linear_fit(&pn, &eg).ok();
    EnsembleSummary {
        runs: records.len(),
        converged: ok.len(),
        diverged: records.iter().filter(|r| r.diverged).count(),
        corr_entropy_eg: pearson(&s, &eg).ok(),
        spearman_neg_log_trace_entropy: spearman(&neg_log_tr, &s).ok(),
        corr_product_norm_eg: pearson(&pn, &eg).ok(),
        fit_eg_vs_product_norm_slope: fit.map(|f| f.0),
        fit_eg_vs_product_norm_intercept: fit.map(|f| f.1),
        max_trace_relative_error: ok
            .iter()
            .filter_map(|r| r.trace_fd.map(|fd| (fd - r.trace_formula).abs() / r.trace_formula.abs()))
            .reduce(f64::max),
        max_invariant_drift: ok
            .iter()
            .map(|r| (r.invariant_final - r.invariant_initial).abs())
            .fold(0.0, f64::max),
    }
}

fn ensemble_csv(records: &[LinearRunRecord]) -> String {
    let mut out = String::from(LinearRunRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn suite_config(cfg: &Settings, balance: Balance) -> Result<LinearSuiteConfig, CliError> {
    Ok(LinearSuiteConfig {
        teacher: TeacherConfig {
            n_input: cfg.get("n_input")?,
            n_hidden: cfg.get("n_hidden")?,
            n_samples: cfg.get("n_samples")?,
            noise_std: cfg.get("noise_std")?,
            seed: cfg.get("seed")?,
        },
        runs: cfg.get("runs")?,
        init_std: cfg.get("init_std")?,
        balance,
        learning_rate: cfg.get("learning_rate")?,
        batch_size: cfg.get("batch_size")?,
        steps: cfg.get("steps")?,
        refine_tolerance: cfg.get("refine_tolerance")?,
        refine_max_iters: cfg.get("refine_max_iters")?,
        fd_check: cfg.get("fd_check")?,
    })
}

pub fn run(cfg: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let (min, max): (f64, f64) = (cfg.get("asymmetry_min")?, cfg.get("asymmetry_max")?);
    if !(min >= 1.0 && max >= min) {
        return Err(CliError::Validation(format!("asymmetry range [{min}, {max}] must satisfy 1 ≤ min ≤ max")));
    }
    let mut flags = Vec::new();
    let mut summaries = Vec::new();
    for (name, balance) in [("balanced", Balance::Balanced), ("imbalanced", Balance::Asymmetric { min, max })] {
        let (_, records) = run_ensemble(&suite_config(cfg, balance)?)?;
        write_file(out, &format!("{name}.csv"), &ensemble_csv(&records))?;
        let summary = summarize(&records);
        let unconverged = summary.runs - summary.converged;
        if unconverged as f64 > MAX_UNCONVERGED_FRACTION * summary.runs as f64 {
            flags.push(format!("{name}: {unconverged} of {} runs did not converge", summary.runs));
        }
        summaries.push(summary);
    }
    let (bal, imb) = (&summaries[0], &summaries[1]);
    let entropy_corr_weaker = bal
        .corr_entropy_eg
        .zip(imb.corr_entropy_eg)
        .map(|(b, i)| i.abs() < b.abs());
    let norm_corr_change = bal
        .corr_product_norm_eg
        .zip(imb.corr_product_norm_eg)
        .map(|(b, i)| (i - b).abs());
    write_json(
        out,
        "summary.json",
        &json!({
            "command": "linear-suite",
            "statistics_over": "converged runs with a finite entropy",
            "predicted_slope": 1.0 / cfg.get::<f64>("n_input")?,
            "balanced": bal,
            "imbalanced": imb,
            "imbalanced_entropy_corr_weaker": entropy_corr_weaker,
            "product_norm_corr_change": norm_corr_change,
            "flagged": !flags.is_empty(),
            "flags": flags,
        }),
    )?;
    write_file(out, "config.resolved", &cfg.render())?;
    Ok(Outcome::from_flags(flags))
}
