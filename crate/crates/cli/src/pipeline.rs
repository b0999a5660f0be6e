//! Dataset loading and the per-run train → refine → Hessian → entropy
//! pipeline shared by the classification subcommands.

use std::fs::File;
use std::path::PathBuf;
use std::time::Instant;

use landscape_core::data::{self, SplitConfig};
use landscape_core::hessian::{self, clean_spectrum_negmag};
use landscape_core::model::{self, Activation, Dataset, LossKind, NetworkSpec, ParamVector};
use landscape_core::numerics::{symmetric_eigenvalues, RngStream};
use landscape_core::optim::{self, Algorithm, OptimizerConfig};

use crate::config::{KeySpec, Settings};
use crate::report::RunReport;
use crate::CliError;

pub const DATA_KEYS: &[KeySpec] = &[
    ("dataset", "synthetic", "cifar", "synthetic | cifar | cache"),
    ("features", "40", "40", "synthetic: feature count"),
    ("per_class", "100", "100", "synthetic: samples per class in each of train and test"),
    ("separation", "2", "2", "synthetic: distance between the class means"),
    ("data_seed", "", "", "seed for dataset draws and splits; empty uses the master seed"),
    ("cifar_batches", "", "", "cifar: comma-separated binary batch files"),
    ("classes", "0,1", "0,1", "cifar: the two labels to keep, mapped to 0 and 1"),
    ("n_train", "500", "500", "cifar: training samples, half per class"),
    ("n_test", "2000", "2000", "cifar: test samples, half per class"),
    ("cache_train", "", "", "cache: training set file"),
    ("cache_test", "", "", "cache: test set file"),
];

pub const MODEL_KEYS: &[KeySpec] = &[
    ("widths", "40-8-8-1", "100-10-10-10-10-1", "layer widths, input first, output 1"),
    ("hidden_activation", "sigmoid", "relu", "activation of hidden layers after the first (sigmoid | relu)"),
    ("lambda", "1e-3", "1e-7", "L2 regularization strength"),
];

pub const TRAIN_KEYS: &[KeySpec] = &[
    ("runs", "20", "50", "runs per algorithm"),
    ("init_std", "0.5", "0.1", "standard deviation of the Gaussian initial weights"),
    ("learning_rate", "1", "0.1", "step size for all optimizers"),
    ("batch_size", "20", "50", "SGD minibatch size"),
    ("epochs", "1000", "8000", "SGD epochs"),
    ("langevin_iterations", "10000", "80000", "Langevin iterations"),
    ("gd_iterations", "10000", "80000", "gradient-descent iterations"),
    ("langevin_minibatches", "10", "10", "minibatches used to estimate the Langevin noise variance"),
    ("refine_tolerance", "3e-5", "3e-5", "steepest-descent stop: max-abs gradient"),
    ("refine_max_iters", "200000", "200000", "steepest-descent iteration cap"),
    ("hessian_cap", "2000", "2000", "refuse Hessians with more parameters than this"),
    ("seed", "0", "0", "master seed; run i uses stream i"),
];

pub fn schema(parts: &[&[KeySpec]], extra: &[KeySpec]) -> Vec<KeySpec> {
    parts.iter().flat_map(|p| p.iter().copied()).chain(extra.iter().copied()).collect()
}

fn data_seed(cfg: &Settings) -> Result<u64, CliError> {
    match cfg.get_opt::<u64>("data_seed")? {
        Some(s) => Ok(s),
        None => cfg.get("seed"),
    }
}

fn required_path(cfg: &Settings, key: &str) -> Result<PathBuf, CliError> {
    cfg.get_opt::<PathBuf>(key)?
        .ok_or_else(|| CliError::Validation(format!("`{key}` must be set for dataset = {}", cfg.raw("dataset"))))
}

/// Train and test sets as described by the data keys.
pub fn load_data(cfg: &Settings) -> Result<(Dataset, Dataset), CliError> {
    match cfg.raw("dataset") {
        "synthetic" => Ok(data::synthetic_classification(
            cfg.get("features")?,
            cfg.get("per_class")?,
            cfg.get("separation")?,
            data_seed(cfg)?,
        )?),
        "cifar" => {
            let paths: Vec<PathBuf> = cfg.get_list("cifar_batches", ',')?;
            if paths.is_empty() {
                return Err(CliError::Validation("`cifar_batches` must list at least one file".into()));
            }
            let mut records = Vec::new();
            for p in &paths {
                records.extend(data::load_cifar_batch(p)?);
            }
            let classes: Vec<u8> = cfg.get_list("classes", ',')?;
            let [a, b] = classes[..] else {
                return Err(CliError::Validation("`classes` needs exactly two labels".into()));
            };
            let split = SplitConfig {
                classes: (a, b),
                n_train: cfg.get("n_train")?,
                n_test: cfg.get("n_test")?,
                seed: data_seed(cfg)?,
            };
            Ok(data::make_split(&records, &split)?)
        }
        "cache" => {
            let read = |key: &str| -> Result<Dataset, CliError> {
                let path = required_path(cfg, key)?;
                let mut f = File::open(&path)
                    .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
                Ok(data::read_dataset_cache(&mut f)?)
            };
            Ok((read("cache_train")?, read("cache_test")?))
        }
        other => Err(CliError::Validation(format!("dataset = `{other}`: expected synthetic, cifar or cache"))),
    }
}

/// Sigmoid first layer, `hidden_activation` after it, sigmoid output with
/// cross-entropy loss.
pub fn build_spec(cfg: &Settings) -> Result<NetworkSpec, CliError> {
    let widths: Vec<usize> = cfg.get_list("widths", '-')?;
    if widths.len() < 2 {
        return Err(CliError::Validation("`widths` needs at least two layers".into()));
    }
    let hidden = match cfg.raw("hidden_activation") {
        "sigmoid" => Activation::Sigmoid,
        "relu" => Activation::Relu,
        other => return Err(CliError::Validation(format!("hidden_activation = `{other}`"))),
    };
    let layers = widths.len() - 1;
    let activations = (0..layers)
        .map(|l| if l == 0 || l == layers - 1 { Activation::Sigmoid } else { hidden })
        .collect();
    Ok(NetworkSpec::new(widths, activations, LossKind::CrossEntropy, cfg.get("lambda")?)?)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: NetworkSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub init_std: f64,
    pub seed: u64,
    pub base: OptimizerConfig,
    pub epochs: usize,
    pub langevin_iterations: usize,
    pub gd_iterations: usize,
    pub hessian_cap: usize,
}

impl Experiment {
    pub fn from_settings(cfg: &Settings) -> Result<Self, CliError> {
        let spec = build_spec(cfg)?;
        let (train, test) = load_data(cfg)?;
        train.check_for(&spec)?;
        test.check_for(&spec)?;
        let base = OptimizerConfig {
            algorithm: Algorithm::Sgd,
            learning_rate: cfg.get("learning_rate")?,
            batch_size: cfg.get("batch_size")?,
            iterations: 1,
            refine_tolerance: cfg.get("refine_tolerance")?,
            refine_max_iters: cfg.get("refine_max_iters")?,
            langevin_minibatches: cfg.get("langevin_minibatches")?,
            log_every: usize::MAX,
        };
        let exp = Self {
            spec,
            train,
            test,
            init_std: cfg.get("init_std")?,
            seed: cfg.get("seed")?,
            base,
            epochs: cfg.get("epochs")?,
            langevin_iterations: cfg.get("langevin_iterations")?,
            gd_iterations: cfg.get("gd_iterations")?,
            hessian_cap: cfg.get("hessian_cap")?,
        };
        for alg in Algorithm::ALL {
            exp.optimizer(alg).validate(exp.train.len())?;
        }
        if !(exp.init_std > 0.0) {
            return Err(CliError::Validation("init_std must be positive".into()));
        }
        if exp.spec.n_params() > exp.hessian_cap {
            return Err(CliError::Validation(format!(
                "{} parameters exceed hessian_cap = {}",
                exp.spec.n_params(),
                exp.hessian_cap
            )));
        }
        Ok(exp)
    }

    pub fn optimizer(&self, algorithm: Algorithm) -> OptimizerConfig {
        let iterations = match algorithm {
            Algorithm::Sgd => self.epochs,
            Algorithm::Langevin => self.langevin_iterations,
            Algorithm::Gd => self.gd_iterations,
        };
        OptimizerConfig { algorithm, iterations, ..self.base.clone() }
    }

    /// Trains run `run` with `algorithm` from stream `run` of the master
    /// seed; every algorithm sees the same initial point for a given run.
    pub fn run_one(&self, algorithm: Algorithm, run: usize) -> Result<(RunReport, ParamVector), CliError> {
        let start = Instant::now();
        let mut rng = RngStream::new(self.seed, run as u64);
        let theta0 = self.spec.init_gaussian(self.init_std, &mut rng)?;
        let cfg = self.optimizer(algorithm);
        let traj = optim::run(&self.spec, &theta0, &self.train, &cfg, &mut rng)?;
        let nan = f64::NAN;
        let mut report = RunReport {
            run,
            seed: self.seed,
            algorithm: algorithm.name().to_string(),
            converged: false,
            diverged: traj.diverged,
            grad_inf_norm: nan,
            train_loss: nan,
            train_error: nan,
            test_error: nan,
            h: nan,
            s: nan,
            log_sum: nan,
            free_energy: nan,
            alpha: self.train.len() as f64 / self.spec.n_params() as f64,
            trace: nan,
            retained: 0,
            wall_seconds: 0.0,
        };
        if traj.diverged {
            report.wall_seconds = start.elapsed().as_secs_f64();
            return Ok((report, traj.final_theta));
        }
        let refined = optim::refine(
            &self.spec,
            &traj.final_theta,
            &self.train,
            cfg.refine_tolerance,
            cfg.learning_rate,
            cfg.refine_max_iters,
        )?;
        let theta = refined.theta;
        report.converged = refined.converged;
        report.grad_inf_norm = refined.grad_inf_norm;
        report.train_error = model::misclassification_rate(&self.spec, &theta, &self.train)?;
        report.test_error = model::misclassification_rate(&self.spec, &theta, &self.test)?;
        let mut h = hessian::hessian_fd_raw(&self.spec, &theta, &self.train, self.hessian_cap)?;
        h.symmetrize();
        let cleaned = clean_spectrum_negmag(&symmetric_eigenvalues(&h)?);
        report.retained = cleaned.retained.len();
        match hessian::thermo(&self.spec, &theta, &self.train, &cleaned) {
            Ok(t) => {
                report.train_loss = t.u;
                report.h = t.h;
                report.s = t.s;
                report.log_sum = t.log_sum;
                report.free_energy = t.free_energy;
                report.trace = t.trace;
            }
            Err(_) => {
                report.train_loss = model::mean_data_loss(&self.spec, &theta, &self.train)?;
                report.trace = cleaned.sum();
            }
        }
        report.wall_seconds = start.elapsed().as_secs_f64();
        Ok((report, theta))
    }
}
