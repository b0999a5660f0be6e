//! `noise-verify`: minibatch gradient-noise covariance on a linear model.
//!
//! Three cases share one random linear regression problem: a small one
//! small enough to enumerate every batch, a large one where only the
//! asymptotic prefactor and sampling are feasible, and `b = P` where the
//! noise vanishes.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use landscape_core::model::{Activation, Dataset, LossKind, NetworkSpec, ParamVector};
use landscape_core::numerics::{symmetric_eigenvalues, DenseMatrix, RngStream};
use landscape_core::optim::{
    noise_cov_empirical, noise_cov_enumerated, noise_cov_exact, noise_cov_theoretical, write_covariance,
    CovarianceKind, NoiseCovariance,
};

use crate::config::{KeySpec, Settings};
use crate::{write_file, write_json, CliError, Outcome};

const KEYS: &[KeySpec] = &[
    ("features", "2", "2", "inputs of the linear model (parameters = features)"),
    ("small_p", "6", "6", "samples in the enumerated case"),
    ("small_b", "2", "2", "batch size in the enumerated case"),
    ("large_p", "1000", "1000", "samples in the asymptotic case"),
    ("large_b", "50", "50", "batch size in the asymptotic case"),
    ("draws", "20000", "20000", "random batches for the empirical estimates"),
    ("enumerated_tolerance", "1e-10", "1e-10", "max relative error, enumeration vs exact"),
    ("asymptotic_tolerance", "2e-3", "2e-3", "max relative error, asymptotic vs exact at large P"),
    ("seed", "0", "0", "seed for data, parameters and batch draws"),
];

/// Eigenvalues below `-PSD_SLACK·max|λ|` count as a PSD violation.
const PSD_SLACK: f64 = 1e-12;

/// Full-batch covariances count as zero below `ZERO_SLACK·‖Σ_small‖_F`.
const ZERO_SLACK: f64 = 1e-12;

pub fn schema() -> Vec<KeySpec> {
    KEYS.to_vec()
}

#[derive(Debug, Serialize)]
struct Row {
    case: &'static str,
    p: usize,
    b: usize,
    kind: &'static str,
    frobenius: f64,
    relative_error_vs_exact: f64,
    min_eigenvalue: f64,
    psd: bool,
}

/// Random linear regression with `p` samples: x, y ~ N(0, 1).
fn problem(features: usize, p: usize, rng: &mut RngStream) -> Result<(NetworkSpec, Dataset), CliError> {
    let spec = NetworkSpec::new(vec![features, 1], vec![Activation::Identity], LossKind::HalfQuadratic, 0.0)?;
    let x = DenseMatrix::from_fn(p, features, |_, _| rng.standard_normal());
    let y = (0..p).map(|_| rng.standard_normal()).collect();
    Ok((spec, Dataset::new(x, y)?))
}

fn relative_error(a: &DenseMatrix, exact: &DenseMatrix) -> Result<f64, CliError> {
    let diff = a.sub(exact)?.frobenius();
    let scale = exact.frobenius();
    Ok(if scale == 0.0 { diff } else { diff / scale })
}

fn row(case: &'static str, cov: &NoiseCovariance, exact: &DenseMatrix) -> Result<Row, CliError> {
    let spectrum = symmetric_eigenvalues(&cov.matrix)?;
    let min = spectrum.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = spectrum.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Row {
        case,
        p: cov.sample_count,
        b: cov.batch_size,
        kind: match cov.kind {
            CovarianceKind::PaperAsymptotic => "asymptotic",
            CovarianceKind::ExactFiniteP => "exact",
            CovarianceKind::Empirical => "empirical",
        },
        frobenius: cov.matrix.frobenius(),
        relative_error_vs_exact: relative_error(&cov.matrix, exact)?,
        min_eigenvalue: min,
        psd: min >= -PSD_SLACK * max,
    })
}

fn dump(out: &Path, case: &str, cov: &NoiseCovariance, tag: &str) -> Result<(), CliError> {
    let mut csv = BufWriter::new(File::create(out.join(format!("cov_{case}_{tag}.csv")))?);
    let mut js = BufWriter::new(File::create(out.join(format!("cov_{case}_{tag}.json")))?);
    write_covariance(cov, &mut csv, &mut js)?;
    Ok(())
}

/// Exact, asymptotic, empirical and (when feasible) enumerated covariances
/// for one `(P, b)` case at a random θ.
#[allow(clippy::too_many_arguments)]
fn case(
    out: &Path,
    name: &'static str,
    features: usize,
    p: usize,
    b: usize,
    draws: usize,
    enumerate: bool,
    seed: u64,
    stream: u64,
) -> Result<Vec<Row>, CliError> {
    if b == 0 || b > p {
        return Err(CliError::Validation(format!("{name}: batch size {b} outside 1..={p}")));
    }
    let mut rng = RngStream::new(seed, stream);
    let (spec, data) = problem(features, p, &mut rng)?;
    let theta = ParamVector::new((0..features).map(|_| rng.standard_normal()).collect());
    let exact = noise_cov_exact(&spec, &theta, &data, b)?;
    let mut covs = vec![
        ("exact", exact.clone()),
        ("asymptotic", noise_cov_theoretical(&spec, &theta, &data, b)?),
        ("empirical", noise_cov_empirical(&spec, &theta, &data, b, draws, &mut rng)?),
    ];
    if enumerate {
        covs.push(("enumerated", noise_cov_enumerated(&spec, &theta, &data, b)?));
    }
    let mut rows = Vec::new();
    for (tag, cov) in &covs {
        dump(out, name, cov, tag)?;
        let mut r = row(name, cov, &exact.matrix)?;
        if *tag == "enumerated" {
            r.kind = "enumerated";
        }
        rows.push(r);
    }
    Ok(rows)
}

pub fn run(cfg: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let features: usize = cfg.get("features")?;
    if features == 0 {
        return Err(CliError::Validation("features must be ≥ 1".into()));
    }
    let (small_p, small_b): (usize, usize) = (cfg.get("small_p")?, cfg.get("small_b")?);
    let (large_p, large_b): (usize, usize) = (cfg.get("large_p")?, cfg.get("large_b")?);
    let draws: usize = cfg.get("draws")?;
    let enum_tol: f64 = cfg.get("enumerated_tolerance")?;
    let asym_tol: f64 = cfg.get("asymptotic_tolerance")?;
    let seed: u64 = cfg.get("seed")?;

    let mut rows = case(out, "small", features, small_p, small_b, draws, true, seed, 0)?;
    rows.extend(case(out, "large", features, large_p, large_b, draws, false, seed, 1)?);
    rows.extend(case(out, "full-batch", features, small_p, small_p, draws, true, seed, 0)?);

    let mut csv = String::from("case,P,b,kind,frobenius,relative_error_vs_exact,min_eigenvalue,psd\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:e},{:e},{:e},{}",
            r.case, r.p, r.b, r.kind, r.frobenius, r.relative_error_vs_exact, r.min_eigenvalue, r.psd
        );
    }
    write_file(out, "noise.csv", &csv)?;

    let find = |case: &str, kind: &str| rows.iter().find(|r| r.case == case && r.kind == kind).unwrap();
    let enumerated_error = find("small", "enumerated").relative_error_vs_exact;
    let asymptotic_error = find("large", "asymptotic").relative_error_vs_exact;
    let full_batch_max = rows.iter().filter(|r| r.case == "full-batch").map(|r| r.frobenius).fold(0.0, f64::max);
    let mut flags = Vec::new();
    if !(enumerated_error < enum_tol) {
        flags.push(format!("enumerated vs exact relative error {enumerated_error:e} ≥ {enum_tol:e}"));
    }
    if !(asymptotic_error < asym_tol) {
        flags.push(format!("asymptotic vs exact relative error {asymptotic_error:e} ≥ {asym_tol:e}"));
    }
    // Batch means of the full set match the full mean only to rounding.
    let zero_scale = ZERO_SLACK * find("small", "exact").frobenius;
    if full_batch_max > zero_scale {
        flags.push(format!("full-batch covariance has Frobenius norm {full_batch_max:e}, expected 0"));
    }
    for r in rows.iter().filter(|r| !r.psd) {
        flags.push(format!("{} {} covariance is not PSD (min eigenvalue {:e})", r.case, r.kind, r.min_eigenvalue));
    }
    write_json(
        out,
        "summary.json",
        &json!({
            "command": "noise-verify",
            "enumerated_vs_exact": enumerated_error,
            "asymptotic_vs_exact_large_p": asymptotic_error,
            "expected_asymptotic_discrepancy": 1.0 / large_p as f64,
            "full_batch_max_frobenius": full_batch_max,
            "rows": rows,
            "flagged": !flags.is_empty(),
            "flags": flags,
        }),
    )?;
    write_file(out, "config.resolved", &cfg.render())?;
    Ok(Outcome::from_flags(flags))
}
