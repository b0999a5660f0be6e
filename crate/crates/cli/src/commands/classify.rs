//! `train-compare` and `entropy-vs-error`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use landscape_core::model::write_checkpoint;
use landscape_core::numerics::{mann_whitney_greater, pearson, RankTest};
use landscape_core::optim::Algorithm;
use landscape_core::Error;

use crate::config::{KeySpec, Settings};
use crate::pipeline::{schema, Experiment, DATA_KEYS, MODEL_KEYS, TRAIN_KEYS};
use crate::report::{histogram_bins, histogram_counts, runs_csv, wall_seconds, Moments, RunReport};
use crate::{write_file, write_json, CliError, Outcome};

/// More than this fraction of divergent runs flags the experiment.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.2;

const COMPARE_EXTRA: &[KeySpec] = &[
    ("algorithms", "sgd,langevin,gd", "sgd,langevin,gd", "algorithms to compare"),
    ("save_checkpoints", "false", "false", "write each run's final parameters under checkpoints/"),
];

const SCATTER_EXTRA: &[KeySpec] = &[(
    "train_error_threshold",
    "1e-3",
    "1e-3",
    "runs at or above this training error are excluded",
)];

pub fn compare_schema() -> Vec<KeySpec> {
    schema(&[DATA_KEYS, MODEL_KEYS, TRAIN_KEYS], COMPARE_EXTRA)
}

pub fn scatter_schema() -> Vec<KeySpec> {
    schema(&[DATA_KEYS, MODEL_KEYS, TRAIN_KEYS], SCATTER_EXTRA)
}

/// Runs every `(algorithm, run)` pair on the ambient pool, returning them
/// grouped by algorithm then ordered by run.
fn run_all(
    exp: &Experiment,
    algorithms: &[Algorithm],
    runs: usize,
    out: &Path,
    save: bool,
) -> Result<Vec<RunReport>, CliError> {
    let jobs: Vec<(Algorithm, usize)> = algorithms
        .iter()
        .flat_map(|&a| (0..runs).map(move |r| (a, r)))
        .collect();
    if save {
        std::fs::create_dir_all(out.join("checkpoints"))?;
    }
    jobs.par_iter()
        .map(|&(alg, run)| {
            let (report, theta) = exp.run_one(alg, run)?;
            if save {
                let path = out.join("checkpoints").join(format!("{}_{run:03}.lscp", alg.name()));
                write_checkpoint(&path, &exp.spec, &theta)?;
            }
            Ok(report)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct AlgorithmSummary {
    runs: usize,
    usable: usize,
    diverged: usize,
    unconverged: usize,
    entropy: Moments,
    test_error: Moments,
    train_loss: Moments,
    free_energy: Moments,
    histogram: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Comparison {
    greater: &'static str,
    than: &'static str,
    mean_difference: Option<f64>,
    #[serde(flatten)]
    test: Option<RankTest>,
}

fn column(rows: &[&RunReport], f: impl Fn(&RunReport) -> f64) -> Vec<f64> {
    rows.iter().map(|r| f(r)).collect()
}

/// Divergence flags per algorithm, in algorithm order.
fn divergence_flags(rows: &[RunReport], algorithms: &[Algorithm]) -> Vec<String> {
    algorithms
        .iter()
        .filter_map(|a| {
            let mine: Vec<_> = rows.iter().filter(|r| r.algorithm == a.name()).collect();
            let diverged = mine.iter().filter(|r| r.diverged).count();
            (diverged as f64 > MAX_DIVERGENT_FRACTION * mine.len() as f64)
                .then(|| format!("{}: {diverged} of {} runs diverged", a.name(), mine.len()))
        })
        .collect()
}

pub fn train_compare(cfg: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let exp = Experiment::from_settings(cfg)?;
    let algorithms: Vec<Algorithm> = cfg.get_list("algorithms", ',')?;
    if algorithms.is_empty() {
        return Err(CliError::Validation("`algorithms` is empty".into()));
    }
    let runs: usize = cfg.get("runs")?;
    let rows = run_all(&exp, &algorithms, runs, out, cfg.get("save_checkpoints")?)?;
    write_file(out, "runs.csv", &runs_csv(&rows))?;

    let usable: Vec<&RunReport> = rows.iter().filter(|r| r.usable()).collect();
    let bins = histogram_bins(&column(&usable, |r| r.s));
    let mut hist = String::from("algorithm,bin,low,high,count\n");
    let mut per_alg = BTreeMap::new();
    let mut entropies = BTreeMap::new();
    for &alg in &algorithms {
        let mine: Vec<&RunReport> = rows.iter().filter(|r| r.algorithm == alg.name()).collect();
        let ok: Vec<&RunReport> = mine.iter().copied().filter(|r| r.usable()).collect();
        let s = column(&ok, |r| r.s);
        let counts = histogram_counts(&bins, &s);
        for (k, c) in counts.iter().enumerate() {
            let _ = writeln!(hist, "{},{k},{:e},{:e},{c}", alg.name(), bins.edges[k], bins.edges[k + 1]);
        }
        per_alg.insert(
            alg.name(),
            AlgorithmSummary {
                runs: mine.len(),
                usable: ok.len(),
                diverged: mine.iter().filter(|r| r.diverged).count(),
                unconverged: mine.iter().filter(|r| !r.diverged && !r.converged).count(),
                entropy: Moments::of(&s),
                test_error: Moments::of(&column(&ok, |r| r.test_error)),
                train_loss: Moments::of(&column(&ok, |r| r.train_loss)),
                free_energy: Moments::of(&column(&ok, |r| r.free_energy)),
                histogram: counts,
            },
        );
        entropies.insert(alg, s);
    }
    write_file(out, "histogram.csv", &hist)?;

    let mut comparisons = Vec::new();
    for (a, b) in [
        (Algorithm::Sgd, Algorithm::Langevin),
        (Algorithm::Langevin, Algorithm::Gd),
        (Algorithm::Sgd, Algorithm::Gd),
    ] {
        if let (Some(x), Some(y)) = (entropies.get(&a), entropies.get(&b)) {
            comparisons.push(Comparison {
                greater: a.name(),
                than: b.name(),
                mean_difference: Moments::of(x).mean.zip(Moments::of(y).mean).map(|(p, q)| p - q),
                test: mann_whitney_greater(x, y).ok(),
            });
        }
    }
    let flags = divergence_flags(&rows, &algorithms);
    write_json(
        out,
        "summary.json",
        &json!({
            "command": "train-compare",
            "n_params": exp.spec.n_params(),
            "n_train": exp.train.len(),
            "alpha": exp.train.len() as f64 / exp.spec.n_params() as f64,
            "statistics_over": "runs that converged, did not diverge and have a finite entropy",
            "algorithms": per_alg,
            "histogram_edges": bins.edges,
            "histogram_rule": bins.rule,
            "entropy_rank_tests": comparisons,
            "flagged": !flags.is_empty(),
            "flags": flags,
            "wall_seconds": wall_seconds(&rows),
        }),
    )?;
    write_file(out, "config.resolved", &cfg.render())?;
    Ok(Outcome::from_flags(flags))
}

pub fn entropy_vs_error(cfg: &Settings, out: &Path) -> Result<Outcome, CliError> {
    let exp = Experiment::from_settings(cfg)?;
    let runs: usize = cfg.get("runs")?;
    let threshold: f64 = cfg.get("train_error_threshold")?;
    let rows = run_all(&exp, &[Algorithm::Sgd], runs, out, false)?;
    let mut csv = String::from("run,seed,entropy,test_error,train_error,train_loss,converged,included\n");
    let mut included = Vec::new();
    for r in &rows {
        let keep = r.usable() && r.train_error < threshold;
        let _ = writeln!(
            csv,
            "{},{},{:e},{:e},{:e},{:e},{},{keep}",
            r.run, r.seed, r.s, r.test_error, r.train_error, r.train_loss, r.converged
        );
        if keep {
            included.push(r);
        }
    }
    write_file(out, "scatter.csv", &csv)?;
    let s = column(&included, |r| r.s);
    let e = column(&included, |r| r.test_error);
    let (r, status) = if s.len() < 2 {
        (None, format!("insufficient samples: {} runs included", s.len()))
    } else {
        match pearson(&s, &e) {
            Ok(r) => (Some(r), "ok".to_string()),
            Err(Error::UndefinedCorrelation(what)) => (None, format!("undefined correlation: zero variance in {what}")),
            Err(e) => return Err(e.into()),
        }
    };
    let flags = divergence_flags(&rows, &[Algorithm::Sgd]);
    write_json(
        out,
        "summary.json",
        &json!({
            "command": "entropy-vs-error",
            "runs": rows.len(),
            "included": included.len(),
            "excluded": rows.len() - included.len(),
            "train_error_threshold": threshold,
            "pearson_r": r,
            "status": status,
            "entropy": Moments::of(&s),
            "test_error": Moments::of(&e),
            "flagged": !flags.is_empty(),
            "flags": flags,
            "wall_seconds": wall_seconds(&rows),
        }),
    )?;
    write_file(out, "config.resolved", &cfg.render())?;
    Ok(Outcome::from_flags(flags))
}
