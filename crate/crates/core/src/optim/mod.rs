//! SGD, full-batch gradient descent and variance-matched Langevin dynamics,
//! the steepest-descent refinement pass, and the minibatch noise covariance.
//!
//! All three optimizers descend the minibatch objective
//! `(1/|B|)·Σ_{i∈B} lᵢ + (λ/2)‖θ‖²` (see [`model::batch_objective`]); gradient
//! descent and Langevin dynamics use the full sample set as the batch.

mod noise;
mod refine;

pub use noise::{
    centered_second_moment, noise_cov_empirical, noise_cov_enumerated, noise_cov_exact,
    noise_cov_theoretical, write_covariance, CovarianceKind, NoiseCovariance,
};
pub use refine::{refine, RefineOutcome, DEFAULT_REFINE_MAX_ITERS, DEFAULT_REFINE_TOLERANCE};

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, Dataset, NetworkSpec, ParamVector};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Gd,
    Langevin,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Sgd, Algorithm::Langevin, Algorithm::Gd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Gd => "gd",
            Algorithm::Langevin => "langevin",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Algorithm::Sgd),
            "gd" => Ok(Algorithm::Gd),
            "langevin" => Ok(Algorithm::Langevin),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs for SGD; update steps for gradient descent and Langevin.
    pub iterations: usize,
    /// ‖∇‖_∞ target of the refinement pass (and early stop for GD).
    pub refine_tolerance: f64,
    pub refine_max_iters: usize,
    /// Number of random minibatches used to estimate Langevin noise variances.
    pub langevin_minibatches: usize,
    /// Trajectory sampling interval in epochs (SGD) or steps (GD, Langevin).
    pub log_every: usize,
}

impl OptimizerConfig {
    /// Learning rate 0.1, batch size 50, 8000 epochs, tolerance 3e-5,
    /// ten Langevin minibatches.
    pub fn paper_defaults(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            learning_rate: 0.1,
            batch_size: 50,
            iterations: match algorithm {
                Algorithm::Sgd => 8000,
                _ => 80_000,
            },
            refine_tolerance: DEFAULT_REFINE_TOLERANCE,
            refine_max_iters: DEFAULT_REFINE_MAX_ITERS,
            langevin_minibatches: 10,
            log_every: 100,
        }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.batch_size > n_samples {
            return Err(Error::InvalidArgument(format!(
                "batch size {} outside 1..={n_samples}",
                self.batch_size
            )));
        }
        if !(self.refine_tolerance > 0.0) {
            return Err(Error::InvalidArgument("refine tolerance must be positive".into()));
        }
        if self.algorithm == Algorithm::Langevin
            && (self.langevin_minibatches < 2 || self.langevin_minibatches > n_samples)
        {
            return Err(Error::InvalidArgument(format!(
                "{} Langevin minibatches for {n_samples} samples",
                self.langevin_minibatches
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log interval must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    /// Update steps taken so far.
    pub iteration: usize,
    /// Full-batch objective.
    pub loss: f64,
    pub grad_inf_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub final_theta: ParamVector,
    pub steps: usize,
    /// A non-finite loss, gradient or parameter aborted the run.
    pub diverged: bool,
    /// Gradient descent met the refine tolerance before its step budget.
    pub stopped_early: bool,
}

impl Trajectory {
    fn new(theta: ParamVector) -> Self {
        Self {
            points: Vec::new(),
            final_theta: theta,
            steps: 0,
            diverged: false,
            stopped_early: false,
        }
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "iteration,loss,grad_inf_norm")?;
        for p in &self.points {
            writeln!(out, "{},{:e},{:e}", p.iteration, p.loss, p.grad_inf_norm)?;
        }
        Ok(())
    }
}

/// Full-batch objective and gradient with samples in index order.
fn full_objective(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset, all: &[usize]) -> Result<(f64, ParamVector)> {
    model::batch_objective(spec, theta, data, all)
}

/// Maps numerical blow-ups to `None` so callers can flag divergence.
fn finite_or_diverged<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn record(traj: &mut Trajectory, iteration: usize, loss: f64, grad: &ParamVector) {
    traj.points.push(TrajectoryPoint {
        iteration,
        loss,
        grad_inf_norm: grad.inf_norm(),
    });
}

fn check_common(spec: &NetworkSpec, theta0: &ParamVector, data: &Dataset, cfg: &OptimizerConfig, expected: Algorithm) -> Result<()> {
    if cfg.algorithm != expected {
        return Err(Error::InvalidArgument(format!(
            "{} configuration passed to the {} optimizer",
            cfg.algorithm.name(),
            expected.name()
        )));
    }
    spec.check_params(theta0)?;
    data.check_for(spec)?;
    cfg.validate(data.len())
}

/// Minibatch SGD with shuffle-and-partition batching.
///
/// Each epoch shuffles the sample indices with `rng` and walks them in
/// consecutive batches of `batch_size` (the last may be short). Indices inside
/// a batch are sorted before evaluation, so `batch_size == P` reproduces
/// [`run_gd`] bit for bit.
pub fn run_sgd(
    spec: &NetworkSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    check_common(spec, theta0, data, cfg, Algorithm::Sgd)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut traj = Trajectory::new(theta0.clone());
    let mut theta = theta0.clone();
    let Some((l0, g0)) = finite_or_diverged(full_objective(spec, &theta, data, &all))? else {
        traj.diverged = true;
        return Ok(traj);
    };
    record(&mut traj, 0, l0, &g0);

    let mut order = all.clone();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.iterations {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend_from_slice(chunk);
            batch.sort_unstable();
            let Some((_, g)) = finite_or_diverged(model::batch_objective(spec, &theta, data, &batch))? else {
                traj.diverged = true;
                traj.final_theta = theta;
                return Ok(traj);
            };
            theta.axpy(-cfg.learning_rate, &g);
            traj.steps += 1;
        }
        if epoch % cfg.log_every == 0 || epoch == cfg.iterations {
            match finite_or_diverged(full_objective(spec, &theta, data, &all))? {
                Some((l, g)) => {
                    let steps = traj.steps;
                    record(&mut traj, steps, l, &g)
                }
                None => {
                    traj.diverged = true;
                    break;
                }
            }
        }
    }
    if !theta.is_finite() {
        traj.diverged = true;
    }
    traj.final_theta = theta;
    Ok(traj)
}

/// Full-batch steepest descent with a fixed learning rate, stopping early
/// once ‖∇‖_∞ falls below the refine tolerance.
pub fn run_gd(
    spec: &NetworkSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &OptimizerConfig,
) -> Result<Trajectory> {
    check_common(spec, theta0, data, cfg, Algorithm::Gd)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut traj = Trajectory::new(theta0.clone());
    let mut theta = theta0.clone();
    for step in 0..=cfg.iterations {
        let Some((l, g)) = finite_or_diverged(full_objective(spec, &theta, data, &all))? else {
            traj.diverged = true;
            break;
        };
        let converged = g.inf_norm() < cfg.refine_tolerance;
        if step % cfg.log_every == 0 || step == cfg.iterations || converged {
            record(&mut traj, step, l, &g);
        }
        if converged {
            traj.stopped_early = step < cfg.iterations;
            break;
        }
        if step == cfg.iterations {
            break;
        }
        theta.axpy(-cfg.learning_rate, &g);
        traj.steps += 1;
    }
    traj.final_theta = theta;
    Ok(traj)
}

/// Splits a shuffled index list into `parts` contiguous groups whose sizes
/// differ by at most one (the first `P mod parts` groups get the extra
/// sample).
pub fn near_equal_partition(order: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = order.len() / parts;
    let extra = order.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        out.push(&order[start..start + len]);
        start += len;
    }
    out
}

/// Per-coordinate variance of minibatch-mean gradients across one random
/// split of the samples into `parts` minibatches:
/// `σᵢ² = (1/m)·Σₘ (Gₘ⁽ⁱ⁾ − Ḡ⁽ⁱ⁾)²`, with `Ḡ` the unweighted mean of the `Gₘ`.
pub fn minibatch_gradient_variance(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    parts: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if parts < 2 || parts > data.len() {
        return Err(Error::InvalidArgument(format!(
            "{parts} minibatches for {} samples",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let reg_free = spec.with_l2_lambda(0.0)?;
    let mut grads = Vec::with_capacity(parts);
    for part in near_equal_partition(&order, parts) {
        let mut batch = part.to_vec();
        batch.sort_unstable();
        grads.push(model::batch_objective(&reg_free, theta, data, &batch)?.1);
    }
    let n = theta.len();
    let m = parts as f64;
    let mut mean = vec![0.0; n];
    for g in &grads {
        for (a, b) in mean.iter_mut().zip(g.iter()) {
            *a += b / m;
        }
    }
    let mut var = vec![0.0; n];
    for g in &grads {
        for ((v, b), a) in var.iter_mut().zip(g.iter()).zip(&mean) {
            *v += (b - a) * (b - a) / m;
        }
    }
    Ok(var)
}

/// One draw of the Langevin noise `ζᵢ ~ N(0, η²σᵢ²)`, together with the
/// variances `σᵢ²` it was drawn from.
pub fn langevin_noise(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    learning_rate: f64,
    parts: usize,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let var = minibatch_gradient_variance(spec, theta, data, parts, rng)?;
    let zeta = var
        .iter()
        .map(|v| learning_rate * v.sqrt() * rng.standard_normal())
        .collect();
    Ok((var, zeta))
}

/// Gradient descent plus diagonal Gaussian noise matched to the SGD
/// minibatch-gradient variance: `θ ← θ − ηG(θ) + ζ`, `ζᵢ ~ N(0, η²σᵢ²)`.
///
/// The variances are re-estimated every step from a fresh random split into
/// `langevin_minibatches` near-equal parts. `G` is the exact full-batch
/// gradient, so zero variance reproduces [`run_gd`] (without its early stop).
pub fn run_langevin(
    spec: &NetworkSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    check_common(spec, theta0, data, cfg, Algorithm::Langevin)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut traj = Trajectory::new(theta0.clone());
    let mut theta = theta0.clone();
    for step in 0..=cfg.iterations {
        let Some((l, g)) = finite_or_diverged(full_objective(spec, &theta, data, &all))? else {
            traj.diverged = true;
            break;
        };
        if step % cfg.log_every == 0 || step == cfg.iterations {
            record(&mut traj, step, l, &g);
        }
        if step == cfg.iterations {
            break;
        }
        let Some((_, zeta)) = finite_or_diverged(langevin_noise(
            spec,
            &theta,
            data,
            cfg.learning_rate,
            cfg.langevin_minibatches,
            rng,
        ))?
        else {
            traj.diverged = true;
            break;
        };
        for ((t, gi), z) in theta.iter_mut().zip(g.iter()).zip(&zeta) {
            *t = *t - cfg.learning_rate * gi + z;
        }
        traj.steps += 1;
    }
    if !theta.is_finite() {
        traj.diverged = true;
    }
    traj.final_theta = theta;
    Ok(traj)
}

/// Dispatches on `cfg.algorithm`.
pub fn run(
    spec: &NetworkSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    match cfg.algorithm {
        Algorithm::Sgd => run_sgd(spec, theta0, data, cfg, rng),
        Algorithm::Gd => run_gd(spec, theta0, data, cfg),
        Algorithm::Langevin => run_langevin(spec, theta0, data, cfg, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LossKind};
    use crate::numerics::{mean, DenseMatrix};

    /// (θ − 3)²/2 as a one-weight linear model with x = 1, y = 3.
    fn quadratic_1d() -> (NetworkSpec, Dataset) {
        let spec = NetworkSpec::new(vec![1, 1], vec![Activation::Identity], LossKind::HalfQuadratic, 0.0).unwrap();
        let data = Dataset::new(DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap(), vec![3.0]).unwrap();
        (spec, data)
    }

    fn small_problem(seed: u64) -> (NetworkSpec, ParamVector, Dataset) {
        let mut rng = RngStream::new(seed, 0);
        let spec = NetworkSpec::classifier(&[3, 4, 1], 1e-4);
        let x = DenseMatrix::from_fn(20, 3, |_, _| rng.standard_normal());
        let t = (0..20).map(|i| (x[(i, 0)] + 0.5 * x[(i, 1)] > 0.0) as u8 as f64).collect();
        let theta = spec.init_gaussian(0.1, &mut rng).unwrap();
        (spec, theta, Dataset::new(x, t).unwrap())
    }

    fn cfg(algorithm: Algorithm, lr: f64, b: usize, iters: usize) -> OptimizerConfig {
        OptimizerConfig {
            algorithm,
            learning_rate: lr,
            batch_size: b,
            iterations: iters,
            refine_tolerance: 1e-300,
            refine_max_iters: 1000,
            langevin_minibatches: 2,
            log_every: 1,
        }
    }

    #[test]
    fn paper_defaults() {
        let c = OptimizerConfig::paper_defaults(Algorithm::Sgd);
        assert_eq!((c.learning_rate, c.batch_size, c.iterations), (0.1, 50, 8000));
        assert_eq!(c.refine_tolerance, 3e-5);
        assert_eq!(c.langevin_minibatches, 10);
        assert_eq!(OptimizerConfig::paper_defaults(Algorithm::Langevin).iterations, 80_000);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(Algorithm::Sgd, 0.1, 5, 1);
        assert!(c.validate(4).is_err());
        c.batch_size = 4;
        assert!(c.validate(4).is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate(4).is_err());
        let (spec, theta, data) = small_problem(1);
        assert!(run_gd(&spec, &theta, &data, &cfg(Algorithm::Sgd, 0.1, 1, 1)).is_err());
    }

    #[test]
    fn sgd_full_batch_converges_on_quadratic() {
        let (spec, data) = quadratic_1d();
        let mut rng = RngStream::new(0, 0);
        let t = run_sgd(&spec, &ParamVector::new(vec![0.0]), &data, &cfg(Algorithm::Sgd, 0.1, 1, 200), &mut rng).unwrap();
        // error contracts as 0.9ᵗ: 3·0.9²⁰⁰ ≈ 2e-9
        assert!((t.final_theta[0] - 3.0).abs() < 1e-6);
        assert_eq!(t.steps, 200);
    }

    #[test]
    fn sgd_full_batch_equals_gd() {
        let (spec, theta, data) = small_problem(2);
        let mut rng = RngStream::new(9, 4);
        let sgd = run_sgd(&spec, &theta, &data, &cfg(Algorithm::Sgd, 0.5, 20, 50), &mut rng).unwrap();
        let gd = run_gd(&spec, &theta, &data, &cfg(Algorithm::Gd, 0.5, 20, 50)).unwrap();
        assert_eq!(sgd.final_theta, gd.final_theta);
        assert_eq!(sgd.points, gd.points);
    }

    #[test]
    fn sgd_is_seed_deterministic() {
        let (spec, theta, data) = small_problem(3);
        let c = cfg(Algorithm::Sgd, 0.5, 3, 20);
        let a = run_sgd(&spec, &theta, &data, &c, &mut RngStream::new(1, 2)).unwrap();
        let b = run_sgd(&spec, &theta, &data, &c, &mut RngStream::new(1, 2)).unwrap();
        let other = run_sgd(&spec, &theta, &data, &c, &mut RngStream::new(1, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.final_theta, other.final_theta);
        // 7 batches per epoch, last one short
        assert_eq!(a.steps, 140);
    }

    #[test]
    fn sgd_divergence_is_flagged() {
        let (spec, data) = quadratic_1d();
        let mut rng = RngStream::new(0, 0);
        let t = run_sgd(&spec, &ParamVector::new(vec![0.0]), &data, &cfg(Algorithm::Sgd, 5.0, 1, 2000), &mut rng).unwrap();
        assert!(t.diverged);
    }

    #[test]
    fn gd_stationary_point_is_fixed() {
        let (spec, data) = quadratic_1d();
        let mut c = cfg(Algorithm::Gd, 0.1, 1, 10);
        c.refine_tolerance = 1e-12;
        let t = run_gd(&spec, &ParamVector::new(vec![3.0]), &data, &c).unwrap();
        assert_eq!(t.final_theta[0], 3.0);
        assert_eq!(t.steps, 0);
        assert!(t.stopped_early);
    }

    #[test]
    fn gd_decreases_convex_loss_monotonically() {
        let mut rng = RngStream::new(12, 0);
        let spec = NetworkSpec::new(vec![4, 1], vec![Activation::Identity], LossKind::HalfQuadratic, 0.0).unwrap();
        let x = DenseMatrix::from_fn(10, 4, |_, _| rng.standard_normal());
        let y = (0..10).map(|_| rng.standard_normal()).collect();
        let data = Dataset::new(x, y).unwrap();
        // objective is the mean loss; curvature bound is λmax(XᵀX)/P < 10
        let t = run_gd(&spec, &ParamVector::zeros(4), &data, &cfg(Algorithm::Gd, 0.05, 1, 300)).unwrap();
        assert!(t.points.windows(2).all(|w| w[1].loss <= w[0].loss));
        let again = run_gd(&spec, &ParamVector::zeros(4), &data, &cfg(Algorithm::Gd, 0.05, 1, 300)).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn langevin_with_identical_samples_equals_gd() {
        let spec = NetworkSpec::classifier(&[2, 3, 1], 1e-3);
        let x = DenseMatrix::from_fn(6, 2, |_, c| 0.3 + c as f64);
        let data = Dataset::new(x, vec![1.0; 6]).unwrap();
        let theta = spec.init_gaussian(0.5, &mut RngStream::new(4, 0)).unwrap();
        let mut lc = cfg(Algorithm::Langevin, 0.3, 1, 40);
        lc.langevin_minibatches = 3;
        let lang = run_langevin(&spec, &theta, &data, &lc, &mut RngStream::new(1, 1)).unwrap();
        let gd = run_gd(&spec, &theta, &data, &cfg(Algorithm::Gd, 0.3, 1, 40)).unwrap();
        // Minibatch means of identical samples agree only to rounding, so
        // the injected noise is O(1e-17) rather than exactly zero.
        for (a, b) in lang.final_theta.iter().zip(gd.final_theta.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(lang.points.len(), gd.points.len());
        for (a, b) in lang.points.iter().zip(&gd.points) {
            assert_eq!(a.iteration, b.iteration);
            assert!((a.loss - b.loss).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_sizes() {
        let order: Vec<usize> = (0..23).collect();
        let parts = near_equal_partition(&order, 10);
        let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(parts.concat(), order);
    }

    #[test]
    fn langevin_noise_variance_matches_target() {
        let (spec, theta, data) = small_problem(5);
        let eta = 0.1;
        let mut rng = RngStream::new(77, 0);
        let steps = 10_000;
        let n = theta.len();
        let mut var_sum = vec![0.0; n];
        let mut zeta_sq = vec![0.0; n];
        for _ in 0..steps {
            let (var, zeta) = langevin_noise(&spec, &theta, &data, eta, 10, &mut rng).unwrap();
            for i in 0..n {
                var_sum[i] += eta * eta * var[i];
                zeta_sq[i] += zeta[i] * zeta[i];
            }
        }
        for i in 0..n {
            if var_sum[i] == 0.0 {
                assert_eq!(zeta_sq[i], 0.0);
                continue;
            }
            let ratio = zeta_sq[i] / var_sum[i];
            assert!((ratio - 1.0).abs() < 0.05, "coordinate {i}: ratio {ratio}");
        }
    }

    #[test]
    fn langevin_noise_is_uncorrelated_across_coordinates() {
        let (spec, theta, data) = small_problem(6);
        let mut rng = RngStream::new(78, 0);
        let steps = 10_000;
        let draws: Vec<Vec<f64>> = (0..steps)
            .map(|_| langevin_noise(&spec, &theta, &data, 0.1, 10, &mut rng).unwrap().1)
            .collect();
        let mut violations = 0;
        let mut pairs = 0;
        for i in 0..theta.len() {
            for j in (i + 1)..theta.len() {
                let prod: Vec<f64> = draws.iter().map(|z| z[i] * z[j]).collect();
                let m = mean(&prod);
                let se = crate::numerics::sample_std(&prod) / (steps as f64).sqrt();
                if se == 0.0 {
                    continue;
                }
                pairs += 1;
                if m.abs() >= 3.0 * se {
                    violations += 1;
                }
            }
        }
        // At 3 standard errors about 0.3% of pairs exceed by chance.
        assert!(pairs > 0);
        assert!(violations as f64 <= 0.02 * pairs as f64 + 1.0, "{violations} of {pairs}");
    }
}
