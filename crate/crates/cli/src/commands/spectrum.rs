//! `spectrum`: Hessian analysis of a saved checkpoint.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde_json::json;

use landscape_core::hessian::{self, clean_spectrum_negmag, clean_spectrum_topk, write_spectrum_csv, ThermoReport};
use landscape_core::model::{read_checkpoint, NetworkSpec, ParamVector};
use landscape_core::numerics::{symmetric_eigenvalues, Spectrum};

use crate::config::{KeySpec, Settings};
use crate::pipeline::{build_spec, load_data, schema as join, DATA_KEYS, MODEL_KEYS};
use crate::{write_file, write_json, CliError, Outcome};

const EXTRA: &[KeySpec] = &[
    ("subset", "", "", "keep only the first n training samples; empty keeps all"),
    ("topk", "", "", "eigenvalues kept by the top-k rule; empty uses min(P, N)"),
    ("hessian_cap", "2000", "2000", "refuse Hessians with more parameters than this"),
    ("seed", "0", "0", "dataset seed when data_seed is empty"),
];

pub fn schema() -> Vec<KeySpec> {
    join(&[DATA_KEYS, MODEL_KEYS], EXTRA)
}

/// Loads a checkpoint and checks it against `spec`.
pub fn load_theta(spec: &NetworkSpec, path: &Path) -> Result<ParamVector, CliError> {
    let (widths, theta) = read_checkpoint(path)
        .map_err(|e| CliError::Validation(format!("checkpoint {}: {e}", path.display())))?;
    if widths != spec.widths() {
        return Err(CliError::Validation(format!(
            "checkpoint widths {widths:?} do not match configured widths {:?}",
            spec.widths()
        )));
    }
    Ok(theta)
}

fn write_csv(out: &Path, name: &str, spectrum: &Spectrum) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(out.join(name))?);
    write_spectrum_csv(&mut w, spectrum)?;
    Ok(())
}

pub fn run(cfg: &Settings, checkpoint: &Path, out: &Path) -> Result<Outcome, CliError> {
    let spec = build_spec(cfg)?;
    let theta = load_theta(&spec, checkpoint)?;
    let (mut train, _) = load_data(cfg)?;
    if let Some(n) = cfg.get_opt::<usize>("subset")? {
        if n == 0 || n > train.len() {
            return Err(CliError::Validation(format!("subset = {n} outside 1..={}", train.len())));
        }
        train = train.subset(&(0..n).collect::<Vec<_>>())?;
    }
    train.check_for(&spec)?;
    let mut h = hessian::hessian_fd_raw(&spec, &theta, &train, cfg.get("hessian_cap")?)?;
    let asymmetry = h.asymmetry();
    h.symmetrize();
    let spectrum = symmetric_eigenvalues(&h)?;
    let k = cfg.get_opt::<usize>("topk")?.unwrap_or(train.len().min(spec.n_params()));
    let negmag = clean_spectrum_negmag(&spectrum);
    let topk = clean_spectrum_topk(&spectrum, k)?;
    write_csv(out, "spectrum.csv", &negmag)?;
    write_csv(out, "spectrum_topk.csv", &topk)?;
    let report = |s: &Spectrum| -> Result<ThermoReport, CliError> { Ok(hessian::thermo(&spec, &theta, &train, s)?) };
    write_json(
        out,
        "thermo.json",
        &json!({
            "command": "spectrum",
            "checkpoint": checkpoint.display().to_string(),
            "n_params": spec.n_params(),
            "n_train": train.len(),
            "hessian_asymmetry": asymmetry,
            "negmag": report(&negmag)?,
            "topk": { "k": k, "report": report(&topk)? },
        }),
    )?;
    write_file(out, "config.resolved", &cfg.render())?;
    Ok(Outcome::default())
}
