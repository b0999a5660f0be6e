//! Two-layer linear student `ŷ = W₂W₁x` trained on a noisy linear teacher.
//!
//! Inputs are the columns of `X` (`N_i × P`), so `Σx = XXᵀ` and
//! `Σyx = yXᵀ`. The training loss is `(1/2)‖W₂W₁X − y‖²`, matching
//! [`LossKind::HalfQuadratic`](crate::model::LossKind) with λ = 0 on the
//! network from [`NetworkSpec::deep_linear`]. In parameter-vector form `W₁`
//! comes first (row-major), then `W₂`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hessian::{self, clean_spectrum_topk};
use crate::model::{Dataset, NetworkSpec, ParamVector};
use crate::numerics::{symmetric_eigenvalues, DenseMatrix, RngStream};
use crate::optim::{self, Algorithm, OptimizerConfig};

/// Stream reserved for drawing the teacher and its training set, away from
/// the per-run streams `0, 1, 2, …`.
pub const TEACHER_STREAM: u64 = u64::MAX;

/// Relative singular-value cutoff used to decide the rank of `X`.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Largest `|W₂W₁X − y|` for which a run counts as an exact fit.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TeacherConfig {
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_samples: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_input == 0 || self.n_hidden == 0 || self.n_samples == 0 {
            return Err(Error::InvalidArgument("teacher dimensions must be ≥ 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearNetState {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub teacher: DenseMatrix,
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub sigma_x: DenseMatrix,
    pub sigma_yx: DenseMatrix,
    pub noise_std: f64,
}

impl LinearNetState {
    /// Builds a state from raw parts, deriving the covariances.
    pub fn new(
        w1: DenseMatrix,
        w2: DenseMatrix,
        teacher: DenseMatrix,
        x: DenseMatrix,
        y: Vec<f64>,
        noise_std: f64,
    ) -> Result<Self> {
        let (n_h, n_i) = (w1.rows(), w1.cols());
        if w2.rows() != 1 || w2.cols() != n_h {
            return Err(Error::Dimension(format!("W2 is {}x{}, need 1x{n_h}", w2.rows(), w2.cols())));
        }
        if teacher.rows() != 1 || teacher.cols() != n_i {
            return Err(Error::Dimension("teacher must be 1 x N_i".into()));
        }
        if x.rows() != n_i || x.cols() != y.len() {
            return Err(Error::Dimension(format!(
                "X is {}x{} with {} labels, need {n_i}xP",
                x.rows(),
                x.cols(),
                y.len()
            )));
        }
        let sigma_x = x.matmul(&x.transpose())?;
        let ym = DenseMatrix::from_vec(1, y.len(), y.clone())?;
        let sigma_yx = ym.matmul(&x.transpose())?;
        Ok(Self { w1, w2, teacher, x, y, sigma_x, sigma_yx, noise_std })
    }

    pub fn n_input(&self) -> usize {
        self.w1.cols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden() * (self.n_input() + 1)
    }

    /// Recomputes `XXᵀ` and `yXᵀ` and compares them with the stored copies.
    pub fn check(&self) -> Result<()> {
        let fresh = Self::new(
            self.w1.clone(),
            self.w2.clone(),
            self.teacher.clone(),
            self.x.clone(),
            self.y.clone(),
            self.noise_std,
        )?;
        let stale = fresh.sigma_x.sub(&self.sigma_x)?.max_abs() > 1e-12 * (1.0 + fresh.sigma_x.max_abs())
            || fresh.sigma_yx.sub(&self.sigma_yx)?.max_abs() > 1e-12 * (1.0 + fresh.sigma_yx.max_abs());
        if stale {
            return Err(Error::Degenerate("stored covariances disagree with X, y".into()));
        }
        Ok(())
    }

    pub fn with_weights(&self, w1: DenseMatrix, w2: DenseMatrix) -> Result<Self> {
        if w1.rows() != self.w1.rows() || w1.cols() != self.w1.cols() || w2.cols() != self.w2.cols() || w2.rows() != 1 {
            return Err(Error::Dimension("replacement weights have the wrong shape".into()));
        }
        Ok(Self { w1, w2, ..self.clone() })
    }

    /// End-to-end map `W₂W₁` (1 × N_i).
    pub fn product(&self) -> DenseMatrix {
        self.w2.matmul(&self.w1).expect("shapes checked at construction")
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::deep_linear(self.n_input(), self.n_hidden(), 0.0).expect("dimensions are ≥ 1")
    }

    pub fn params(&self) -> ParamVector {
        let mut v = self.w1.as_slice().to_vec();
        v.extend_from_slice(self.w2.as_slice());
        ParamVector::new(v)
    }

    pub fn with_params(&self, theta: &ParamVector) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!("{} parameters, need {}", theta.len(), self.n_params())));
        }
        let split = self.n_hidden() * self.n_input();
        let w1 = DenseMatrix::from_vec(self.n_hidden(), self.n_input(), theta[..split].to_vec())?;
        let w2 = DenseMatrix::from_vec(1, self.n_hidden(), theta[split..].to_vec())?;
        self.with_weights(w1, w2)
    }

    /// Training set with one sample per column of `X`.
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.x.transpose(), self.y.clone()).expect("finite by construction")
    }

    /// `W₂W₁X − y`.
    pub fn residual(&self) -> Vec<f64> {
        let pred = self.product().matmul(&self.x).expect("shapes checked at construction");
        pred.as_slice().iter().zip(&self.y).map(|(p, y)| p - y).collect()
    }

    /// `(1/2)‖W₂W₁X − y‖²`.
    pub fn loss(&self) -> f64 {
        0.5 * self.residual().iter().map(|r| r * r).sum::<f64>()
    }
}

/// Draws `W̄ ~ N(0, 1)`, inputs `x ~ N(0, I/N_i)` and labels `y = W̄x + ε`
/// with `ε ~ N(0, σ_e²)`, all from stream [`TEACHER_STREAM`] of `cfg.seed`.
/// Student weights start at zero.
pub fn generate_teacher(cfg: &TeacherConfig) -> Result<LinearNetState> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, TEACHER_STREAM);
    let (n_i, n_h, p) = (cfg.n_input, cfg.n_hidden, cfg.n_samples);
    let teacher = DenseMatrix::from_fn(1, n_i, |_, _| rng.standard_normal());
    let scale = (1.0 / n_i as f64).sqrt();
    let x = DenseMatrix::from_fn(n_i, p, |_, _| scale * rng.standard_normal());
    let clean = teacher.matmul(&x)?;
    let y = clean
        .as_slice()
        .iter()
        .map(|v| v + cfg.noise_std * rng.standard_normal())
        .collect();
    LinearNetState::new(
        DenseMatrix::zeros(n_h, n_i),
        DenseMatrix::zeros(1, n_h),
        teacher,
        x,
        y,
        cfg.noise_std,
    )
}

/// `(dW₁, dW₂) = (W₂ᵀE, E W₁ᵀ)` with `E = Σyx − W₂W₁Σx`: the negative
/// gradient of the training loss.
pub fn gradient_flow_rhs(state: &LinearNetState) -> (DenseMatrix, DenseMatrix) {
    let e = state
        .sigma_yx
        .sub(&state.product().matmul(&state.sigma_x).expect("shapes"))
        .expect("shapes");
    let dw1 = state.w2.transpose().matmul(&e).expect("shapes");
    let dw2 = e.matmul(&state.w1.transpose()).expect("shapes");
    (dw1, dw2)
}

/// `‖W₂‖² − ‖W₁‖²_F`.
pub fn balance_invariant(state: &LinearNetState) -> f64 {
    state.w2.frobenius_sq() - state.w1.frobenius_sq()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub final_state: LinearNetState,
    /// Balance invariant before the first step and after each step.
    pub invariant: Vec<f64>,
    /// Training loss at the same instants.
    pub loss: Vec<f64>,
    pub diverged: bool,
}

fn shifted(state: &LinearNetState, base: &LinearNetState, k: &(DenseMatrix, DenseMatrix), h: f64) -> LinearNetState {
    let w1 = base.w1.add(&k.0.scale(h)).expect("shapes");
    let w2 = base.w2.add(&k.1.scale(h)).expect("shapes");
    LinearNetState { w1, w2, ..state.clone() }
}

/// Classical fourth-order Runge–Kutta on the gradient flow (τ = 1).
pub fn integrate_flow(state: &LinearNetState, dt: f64, steps: usize) -> Result<FlowTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut s = state.clone();
    let mut invariant = vec![balance_invariant(&s)];
    let mut loss = vec![s.loss()];
    let mut diverged = false;
    for _ in 0..steps {
        let k1 = gradient_flow_rhs(&s);
        let k2 = gradient_flow_rhs(&shifted(&s, &s, &k1, dt / 2.0));
        let k3 = gradient_flow_rhs(&shifted(&s, &s, &k2, dt / 2.0));
        let k4 = gradient_flow_rhs(&shifted(&s, &s, &k3, dt));
        let mut w1 = s.w1.clone();
        let mut w2 = s.w2.clone();
        for (w, k) in [(&mut w1, [&k1.0, &k2.0, &k3.0, &k4.0]), (&mut w2, [&k1.1, &k2.1, &k3.1, &k4.1])] {
            for (i, v) in w.as_mut_slice().iter_mut().enumerate() {
                let a = k[0].as_slice()[i];
                let b = k[1].as_slice()[i];
                let c = k[2].as_slice()[i];
                let d = k[3].as_slice()[i];
                *v += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
            }
        }
        s.w1 = w1;
        s.w2 = w2;
        if !(s.w1.all_finite() && s.w2.all_finite()) {
            diverged = true;
            break;
        }
        invariant.push(balance_invariant(&s));
        loss.push(s.loss());
    }
    Ok(FlowTrajectory { final_state: s, invariant, loss, diverged })
}

/// Discrete full-batch gradient descent on the summed loss, returning the
/// balance invariant after each step.
pub fn gradient_descent(state: &LinearNetState, learning_rate: f64, steps: usize) -> Result<FlowTrajectory> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {learning_rate}")));
    }
    let mut s = state.clone();
    let mut invariant = vec![balance_invariant(&s)];
    let mut loss = vec![s.loss()];
    let mut diverged = false;
    for _ in 0..steps {
        let (d1, d2) = gradient_flow_rhs(&s);
        s.w1 = s.w1.add(&d1.scale(learning_rate))?;
        s.w2 = s.w2.add(&d2.scale(learning_rate))?;
        if !(s.w1.all_finite() && s.w2.all_finite()) {
            diverged = true;
            break;
        }
        invariant.push(balance_invariant(&s));
        loss.push(s.loss());
    }
    Ok(FlowTrajectory { final_state: s, invariant, loss, diverged })
}

/// Closed-form Hessian trace `‖W₂‖²‖X‖²_F + ‖W₁X‖²_F`.
pub fn hessian_trace_formula(state: &LinearNetState) -> f64 {
    let w1x = state.w1.matmul(&state.x).expect("shapes");
    state.w2.frobenius_sq() * state.x.frobenius_sq() + w1x.frobenius_sq()
}

/// Hessian of `(1/2)(σʸˣ − w₂w₁σˣ)²`-type loss for the scalar chain
/// `ŷ = w₂w₁x`, ordered `(w₁, w₂)`, evaluated with the cross term written
/// as `2w₂w₁σˣ − σʸˣ`.
pub fn scalar_chain_hessian(w1: f64, w2: f64, sigma_x: f64, sigma_yx: f64) -> DenseMatrix {
    let off = 2.0 * w2 * w1 * sigma_x - sigma_yx;
    DenseMatrix::from_vec(2, 2, vec![w2 * w2 * sigma_x, off, off, w1 * w1 * sigma_x])
        .expect("finite inputs give a finite matrix")
}

/// Orthogonal projector onto the column space of `X` (the span of the
/// training inputs). Singular values at or below `1e-10·σ_max` are treated
/// as zero; a zero `X` gives the zero projector.
pub fn input_projector(x: &DenseMatrix) -> DenseMatrix {
    let n = x.rows();
    let m = DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice());
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested U");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut proj = DenseMatrix::zeros(n, n);
    if s_max == 0.0 {
        return proj;
    }
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv <= RANK_CUTOFF * s_max {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                proj[(i, j)] += u[(i, k)] * u[(j, k)];
            }
        }
    }
    proj
}

/// Splits a row vector `W` (1 × N_i) into `W∥ = W·P` and `W⊥ = W − W∥`.
pub fn decompose_parallel_perp(w: &DenseMatrix, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if w.cols() != x.rows() {
        return Err(Error::Dimension(format!("W has {} columns, X has {} rows", w.cols(), x.rows())));
    }
    let par = w.matmul(&input_projector(x))?;
    let perp = w.sub(&par)?;
    Ok((par, perp))
}

/// `(1/N_i)‖W̄ − W₂W₁‖² + σ_e²`.
pub fn generalization_exact(state: &LinearNetState) -> f64 {
    let diff = state.teacher.sub(&state.product()).expect("shapes");
    diff.frobenius_sq() / state.n_input() as f64 + state.noise_std * state.noise_std
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TeacherStats {
    pub perp_norm_sq: f64,
    pub par_norm_sq: f64,
}

/// Plug-in teacher statistics from the realized `W̄` and training inputs.
pub fn teacher_stats(state: &LinearNetState) -> Result<TeacherStats> {
    let (par, perp) = decompose_parallel_perp(&state.teacher, &state.x)?;
    Ok(TeacherStats { perp_norm_sq: perp.frobenius_sq(), par_norm_sq: par.frobenius_sq() })
}

/// `(1/N_i)(⟨‖W̄⊥‖²⟩ − ⟨‖W̄∥‖²⟩ + ‖W₂W₁‖²) + σ_e²`. Refuses unless the
/// student fits the training labels to [`RESIDUAL_TOLERANCE`], since the
/// formula assumes `(W₂W₁)∥ = W̄∥`.
pub fn generalization_predicted(state: &LinearNetState, stats: &TeacherStats) -> Result<f64> {
    let residual = state.residual().iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if !(residual < RESIDUAL_TOLERANCE) {
        return Err(Error::Unconverged { residual, tolerance: RESIDUAL_TOLERANCE });
    }
    let n_i = state.n_input() as f64;
    Ok((stats.perp_norm_sq - stats.par_norm_sq + state.product().frobenius_sq()) / n_i
        + state.noise_std * state.noise_std)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Balance {
    Balanced,
    /// Log-uniform asymmetry factor in `[min, max]`.
    Asymmetric { min: f64, max: f64 },
}

/// Rescales `(W₁, W₂) → (W₁/c, c·W₂)`; the product is unchanged.
fn rescale(w1: &DenseMatrix, w2: &DenseMatrix, c: f64) -> (DenseMatrix, DenseMatrix) {
    (w1.scale(1.0 / c), w2.scale(c))
}

/// Gaussian `N(0, std²)` entries, then balanced so that `‖W₂‖² = ‖W₁‖²_F`.
/// For [`Balance::Asymmetric`] the balanced pair is further rescaled by a
/// log-uniform factor `a`; a fair coin decides whether `W₂` grows by `a`
/// (and `W₁` shrinks) or the reverse. Either way `W₂W₁` is unchanged.
pub fn init_weights(
    n_input: usize,
    n_hidden: usize,
    std: f64,
    balance: Balance,
    rng: &mut RngStream,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::InvalidArgument(format!("init std {std}")));
    }
    if let Balance::Asymmetric { min, max } = balance {
        if !(min >= 1.0 && max >= min && max.is_finite()) {
            return Err(Error::InvalidArgument(format!("asymmetry range [{min}, {max}]")));
        }
    }
    let w1 = DenseMatrix::from_fn(n_hidden, n_input, |_, _| std * rng.standard_normal());
    let w2 = DenseMatrix::from_fn(1, n_hidden, |_, _| std * rng.standard_normal());
    let c = (w1.frobenius() / w2.frobenius()).sqrt();
    let (w1, w2) = rescale(&w1, &w2, c);
    match balance {
        Balance::Balanced => Ok((w1, w2)),
        Balance::Asymmetric { min, max } => {
            let a = (min.ln() + rng.uniform() * (max.ln() - min.ln())).exp();
            let c = if rng.uniform() < 0.5 { a } else { 1.0 / a };
            Ok(rescale(&w1, &w2, c))
        }
    }
}

/// Settings for one ensemble of students sharing a teacher.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearSuiteConfig {
    pub teacher: TeacherConfig,
    pub runs: usize,
    pub init_std: f64,
    pub balance: Balance,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// ‖∇‖_∞ target for the steepest-descent pass after SGD, on the
    /// sample-mean objective.
    pub refine_tolerance: f64,
    pub refine_max_iters: usize,
    /// Also assemble the finite-difference Hessian and check its trace.
    pub fd_check: bool,
}

impl LinearSuiteConfig {
    /// `N_i = 10, N_h = 7, P = 5, σ_e = 1e-4`, SGD with b = 1, η = 0.01 for
    /// 5×10⁴ steps.
    pub fn defaults(seed: u64) -> Self {
        Self {
            teacher: TeacherConfig { n_input: 10, n_hidden: 7, n_samples: 5, noise_std: 1e-4, seed },
            runs: 50,
            init_std: 1.0,
            balance: Balance::Balanced,
            learning_rate: 0.01,
            batch_size: 1,
            steps: 50_000,
            refine_tolerance: 1e-10,
            refine_max_iters: 200_000,
            fd_check: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.teacher.n_samples {
            return Err(Error::InvalidArgument(format!(
                "batch size {} outside 1..={}",
                self.batch_size, self.teacher.n_samples
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.refine_tolerance > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::InvalidArgument("rates, tolerances and init std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearRunRecord {
    pub run: usize,
    pub seed: u64,
    pub eg_actual: f64,
    /// `None` when the run failed the exact-fit precondition.
    pub eg_predicted: Option<f64>,
    pub entropy: f64,
    pub trace_formula: f64,
    pub trace_fd: Option<f64>,
    pub product_norm_sq: f64,
    pub w2_norm_sq: f64,
    pub w1_norm_sq: f64,
    pub invariant_initial: f64,
    pub invariant_final: f64,
    pub max_residual: f64,
    /// Learning rate actually used after the stability cap.
    pub learning_rate: f64,
    pub diverged: bool,
    pub converged: bool,
}

impl LinearRunRecord {
    pub const CSV_HEADER: &'static str = "run,seed,eg_actual,eg_predicted,entropy,trace_h,trace_h_fd,product_norm_sq,w2_norm_sq,w1_norm_sq,invariant_initial,invariant_final,max_residual,learning_rate,diverged,converged";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:e}"));
        format!(
            "{},{},{:e},{},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            self.run,
            self.seed,
            self.eg_actual,
            opt(self.eg_predicted),
            self.entropy,
            self.trace_formula,
            opt(self.trace_fd),
            self.product_norm_sq,
            self.w2_norm_sq,
            self.w1_norm_sq,
            self.invariant_initial,
            self.invariant_final,
            self.max_residual,
            self.learning_rate,
            self.diverged,
            self.converged,
        )
    }
}

/// Largest per-sample Hessian trace `‖W₂‖²‖x‖² + ‖W₁x‖²`; SGD with batch
/// size 1 needs `η` well below its inverse to stay stable.
fn max_sample_curvature(state: &LinearNetState) -> f64 {
    let w2 = state.w2.frobenius_sq();
    (0..state.n_samples())
        .map(|c| {
            let x = state.x.column(c);
            let xsq: f64 = x.iter().map(|v| v * v).sum();
            let w1x: f64 = state.w1.mat_vec(&x).expect("shapes").iter().map(|v| v * v).sum();
            w2 * xsq + w1x
        })
        .fold(0.0, f64::max)
}

/// Trains one student from stream `run` of `seed` and measures it.
///
/// SGD runs on the sample-mean objective with the learning rate capped at
/// `0.5/max-per-sample-curvature` (measured at the initial point), then
/// steepest descent refines to `cfg.refine_tolerance`. Entropy keeps the top
/// `min(P, N_i)` eigenvalues of the finite-difference Hessian.
pub fn train_student(
    base: &LinearNetState,
    cfg: &LinearSuiteConfig,
    seed: u64,
    run: usize,
) -> Result<LinearRunRecord> {
    let mut rng = RngStream::new(seed, run as u64);
    let (w1, w2) = init_weights(base.n_input(), base.n_hidden(), cfg.init_std, cfg.balance, &mut rng)?;
    let start = base.with_weights(w1, w2)?;
    let spec = start.spec();
    let data = start.dataset();
    let learning_rate = cfg.learning_rate.min(0.5 / max_sample_curvature(&start));
    let opt = OptimizerConfig {
        algorithm: Algorithm::Sgd,
        learning_rate,
        batch_size: cfg.batch_size,
        iterations: cfg.steps.div_ceil(data.len().div_ceil(cfg.batch_size)).max(1),
        refine_tolerance: cfg.refine_tolerance,
        refine_max_iters: cfg.refine_max_iters,
        langevin_minibatches: 2.min(data.len()).max(1),
        log_every: usize::MAX,
    };
    let traj = optim::run_sgd(&spec, &start.params(), &data, &opt, &mut rng)?;
    let refined = if traj.diverged {
        None
    } else {
        Some(optim::refine(&spec, &traj.final_theta, &data, cfg.refine_tolerance, learning_rate, cfg.refine_max_iters)?)
    };
    let theta = refined.as_ref().map_or(&traj.final_theta, |r| &r.theta);
    let end = start.with_params(theta)?;
    let max_residual = end.residual().iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let stats = teacher_stats(&end)?;
    let converged = refined.as_ref().is_some_and(|r| r.converged);
    let eg_predicted = if converged { generalization_predicted(&end, &stats).ok() } else { None };
    let trace_formula = hessian_trace_formula(&end);
    let (entropy, trace_fd) = if traj.diverged {
        (f64::NAN, None)
    } else {
        let h = hessian::hessian_fd(&spec, theta, &data)?;
        let spectrum = symmetric_eigenvalues(&h)?;
        let k = end.n_samples().min(end.n_input());
        let cleaned = clean_spectrum_topk(&spectrum, k)?;
        let s = hessian::entropy(&cleaned, end.n_params()).map_or(f64::NAN, |e| e.s);
        (s, cfg.fd_check.then(|| spectrum.sum()))
    };
    Ok(LinearRunRecord {
        run,
        seed,
        eg_actual: generalization_exact(&end),
        eg_predicted,
        entropy,
        trace_formula,
        trace_fd,
        product_norm_sq: end.product().frobenius_sq(),
        w2_norm_sq: end.w2.frobenius_sq(),
        w1_norm_sq: end.w1.frobenius_sq(),
        invariant_initial: balance_invariant(&start),
        invariant_final: balance_invariant(&end),
        max_residual,
        learning_rate,
        diverged: traj.diverged,
        converged,
    })
}

/// Trains `cfg.runs` students on one shared teacher. Runs execute on the
/// ambient rayon pool and come back in run order.
pub fn run_ensemble(cfg: &LinearSuiteConfig) -> Result<(LinearNetState, Vec<LinearRunRecord>)> {
    cfg.validate()?;
    let base = generate_teacher(&cfg.teacher)?;
    let records = (0..cfg.runs)
        .into_par_iter()
        .map(|run| train_student(&base, cfg, cfg.teacher.seed, run))
        .collect::<Result<Vec<_>>>()?;
    Ok((base, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::hessian_fd;
    use crate::model;
    use crate::numerics::linear_fit;
    use proptest::prelude::*;

    fn random_state(n_i: usize, n_h: usize, p: usize, seed: u64) -> LinearNetState {
        let cfg = TeacherConfig { n_input: n_i, n_hidden: n_h, n_samples: p, noise_std: 0.1, seed };
        let base = generate_teacher(&cfg).unwrap();
        let (w1, w2) = init_weights(n_i, n_h, 0.5, Balance::Balanced, &mut RngStream::new(seed, 0)).unwrap();
        base.with_weights(w1, w2).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn noiseless_labels_are_reproducible() {
        let cfg = TeacherConfig { n_input: 4, n_hidden: 2, n_samples: 9, noise_std: 0.0, seed: 3 };
        let s = generate_teacher(&cfg).unwrap();
        let y = s.teacher.matmul(&s.x).unwrap();
        assert_eq!(y.as_slice(), s.y.as_slice());
        assert_eq!(generate_teacher(&cfg).unwrap(), s);
        s.check().unwrap();
    }

    #[test]
    fn inputs_have_unit_expected_norm() {
        let cfg = TeacherConfig { n_input: 100, n_hidden: 1, n_samples: 1000, noise_std: 0.0, seed: 5 };
        let s = generate_teacher(&cfg).unwrap();
        let norms: Vec<f64> = (0..1000).map(|c| s.x.column(c).iter().map(|v| v * v).sum()).collect();
        let m = crate::numerics::mean(&norms);
        // ‖x‖² ~ χ²₁₀₀/100: sd 0.141 per draw, 0.0045 for the mean
        assert!((m - 1.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn origin_and_solution_manifold_are_fixed_points() {
        let cfg = TeacherConfig { n_input: 3, n_hidden: 2, n_samples: 8, noise_std: 0.2, seed: 1 };
        let s = generate_teacher(&cfg).unwrap();
        let (d1, d2) = gradient_flow_rhs(&s);
        assert_eq!(d1.max_abs(), 0.0);
        assert_eq!(d2.max_abs(), 0.0);
        // least-squares product w = Σyx Σx⁻¹, realized as W₁ = e₁w, W₂ = e₁ᵀ
        let sx = DMatrix::from_row_slice(3, 3, s.sigma_x.as_slice());
        let inv = sx.try_inverse().unwrap();
        let w: Vec<f64> = (0..3).map(|j| (0..3).map(|k| s.sigma_yx[(0, k)] * inv[(k, j)]).sum()).collect();
        let mut w1 = DenseMatrix::zeros(2, 3);
        for j in 0..3 {
            w1[(0, j)] = w[j];
        }
        let w2 = DenseMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let at_min = s.with_weights(w1, w2).unwrap();
        let (d1, d2) = gradient_flow_rhs(&at_min);
        assert!(d1.max_abs() < 1e-12 && d2.max_abs() < 1e-12);
    }

    #[test]
    fn flow_is_negative_model_gradient() {
        for seed in 0..5 {
            let s = random_state(4, 3, 6, seed);
            let g = model::gradient(&s.spec(), &s.params(), &s.dataset()).unwrap();
            let (d1, d2) = gradient_flow_rhs(&s);
            let flow: Vec<f64> = d1.as_slice().iter().chain(d2.as_slice()).map(|v| -v).collect();
            for (a, b) in g.iter().zip(&flow) {
                assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            }
            assert!((model::loss(&s.spec(), &s.params(), &s.dataset()).unwrap() - s.loss()).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_conserves_balance_and_decreases_loss() {
        let s = random_state(5, 4, 7, 11);
        let t = integrate_flow(&s, 1e-3, 10_000).unwrap();
        assert!(!t.diverged);
        let drift = t.invariant.iter().map(|v| (v - t.invariant[0]).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-8, "{drift}");
        assert!(t.loss.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = random_state(3, 2, 4, 2);
        let horizon = 0.5;
        let end = |n: usize| integrate_flow(&s, horizon / n as f64, n).unwrap().final_state.params();
        let reference = end(2000);
        let err = |n: usize| {
            end(n).iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(10) / err(20);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn discrete_descent_drifts_at_first_order() {
        let s = random_state(5, 4, 7, 12);
        let t = gradient_descent(&s, 1e-3, 10_000).unwrap();
        let scale = s.w1.frobenius_sq() + s.w2.frobenius_sq();
        let drift = (t.invariant.last().unwrap() - t.invariant[0]).abs();
        assert!(drift <= 1e-2 * scale, "{drift}");
    }

    #[test]
    fn balanced_and_asymmetric_inits() {
        let mut rng = RngStream::new(1, 0);
        let (w1, w2) = init_weights(10, 7, 1.0, Balance::Balanced, &mut rng).unwrap();
        assert!((w2.frobenius_sq() - w1.frobenius_sq()).abs() < 1e-12);
        // a fixed factor: both range ends equal
        let mut a = RngStream::new(4, 0);
        let mut b = RngStream::new(4, 0);
        let (b1, b2) = init_weights(10, 7, 1.0, Balance::Balanced, &mut a).unwrap();
        let (i1, i2) = init_weights(10, 7, 1.0, Balance::Asymmetric { min: 10.0, max: 10.0 }, &mut b).unwrap();
        let n = b1.frobenius_sq();
        let inv = i2.frobenius_sq() - i1.frobenius_sq();
        let grow = 100.0 * n - n / 100.0;
        assert!(rel(inv.abs(), grow) < 1e-12, "{inv} vs ±{grow}");
        let p0 = b2.matmul(&b1).unwrap();
        let p1 = i2.matmul(&i1).unwrap();
        assert!(p0.sub(&p1).unwrap().max_abs() < 1e-12);
        assert!(init_weights(2, 2, 1.0, Balance::Asymmetric { min: 0.5, max: 2.0 }, &mut rng).is_err());
    }

    #[test]
    fn trace_formula_matches_fd_hessian() {
        for seed in 0..6 {
            let s = random_state(2 + seed as usize, 1 + seed as usize % 4, 3 + seed as usize, 100 + seed);
            let h = hessian_fd(&s.spec(), &s.params(), &s.dataset()).unwrap();
            let t = hessian_trace_formula(&s);
            assert!(rel(h.trace(), t) < 1e-6, "{} vs {t}", h.trace());
        }
        let zero = random_state(3, 2, 4, 0).with_weights(DenseMatrix::zeros(2, 3), DenseMatrix::zeros(1, 2)).unwrap();
        assert_eq!(hessian_trace_formula(&zero), 0.0);
    }

    #[test]
    fn scalar_chain_eigenvalues() {
        let on_manifold = symmetric_eigenvalues(&scalar_chain_hessian(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((on_manifold.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!(on_manifold.eigenvalues[1].abs() < 1e-12);
        let origin = symmetric_eigenvalues(&scalar_chain_hessian(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(origin.eigenvalues, vec![1.0, -1.0]);
    }

    #[test]
    fn scalar_chain_matches_network_hessian() {
        // one sample x with σˣ = x², σʸˣ = yx
        let (x, y) = (1.3, 0.7);
        let spec = NetworkSpec::deep_linear(1, 1, 0.0).unwrap();
        let data = Dataset::new(DenseMatrix::from_vec(1, 1, vec![x]).unwrap(), vec![y]).unwrap();
        for (w1, w2) in [(0.4, -1.1), (1.0, 1.0), (0.0, 0.0), (2.0, 0.3)] {
            let h = hessian_fd(&spec, &ParamVector::new(vec![w1, w2]), &data).unwrap();
            let closed = scalar_chain_hessian(w1, w2, x * x, y * x);
            assert!(h.sub(&closed).unwrap().max_abs() < 1e-6);
        }
        // on the manifold the trace is the only nonzero eigenvalue
        let w1 = 0.8;
        let w2 = y / (x * w1);
        let h = scalar_chain_hessian(w1, w2, x * x, y * x);
        let eig = symmetric_eigenvalues(&h).unwrap();
        assert!(rel(eig.eigenvalues[0], (w1 * w1 + w2 * w2) * x * x) < 1e-12);
    }

    #[test]
    fn projector_cases() {
        let full = random_state(3, 1, 5, 1);
        let w = DenseMatrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let (_, perp) = decompose_parallel_perp(&w, &full.x).unwrap();
        assert!(perp.max_abs() < 1e-12);
        let e1 = DenseMatrix::from_vec(3, 1, vec![2.0, 0.0, 0.0]).unwrap();
        let (par, perp) = decompose_parallel_perp(&w, &e1).unwrap();
        assert!(par.sub(&DenseMatrix::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap()).unwrap().max_abs() < 1e-15);
        assert_eq!(par.add(&perp).unwrap(), w);
        let zero = DenseMatrix::zeros(3, 2);
        let (par, perp) = decompose_parallel_perp(&w, &zero).unwrap();
        assert_eq!(par.max_abs(), 0.0);
        assert_eq!(perp, w);
    }

    proptest! {
        #[test]
        fn pythagoras(seed in 0u64..1000, p in 1usize..9) {
            let s = random_state(6, 2, p, seed);
            let mut rng = RngStream::new(seed, 9);
            let w = DenseMatrix::from_fn(1, 6, |_, _| rng.standard_normal());
            let (par, perp) = decompose_parallel_perp(&w, &s.x).unwrap();
            prop_assert!((w.frobenius_sq() - par.frobenius_sq() - perp.frobenius_sq()).abs() < 1e-12 * w.frobenius_sq());
        }

        #[test]
        fn generalization_is_reparameterization_invariant(seed in 0u64..1000, g in 0.1f64..10.0) {
            let s = random_state(4, 1, 3, seed);
            let t = s.with_weights(s.w1.scale(1.0 / g), s.w2.scale(g)).unwrap();
            prop_assert!(rel(generalization_exact(&t), generalization_exact(&s)) < 1e-12);
        }
    }

    #[test]
    fn generalization_closed_cases() {
        let s = random_state(5, 1, 3, 4);
        let mut w1 = DenseMatrix::zeros(1, 5);
        w1.as_mut_slice().copy_from_slice(s.teacher.as_slice());
        let perfect = s.with_weights(w1, DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        assert!((generalization_exact(&perfect) - 0.01).abs() < 1e-15);
        let zero = s.with_weights(DenseMatrix::zeros(1, 5), DenseMatrix::zeros(1, 1)).unwrap();
        assert!(rel(generalization_exact(&zero), s.teacher.frobenius_sq() / 5.0 + 0.01) < 1e-14);
    }

    #[test]
    fn generalization_matches_monte_carlo_test_error() {
        let s = random_state(6, 3, 4, 21);
        let mut rng = RngStream::new(77, 0);
        let w = s.product();
        let scale = (1.0 / 6.0f64).sqrt();
        let n = 100_000;
        let mut losses = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..6).map(|_| scale * rng.standard_normal()).collect();
            let dot = |m: &DenseMatrix| m.as_slice().iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            let y = dot(&s.teacher) + s.noise_std * rng.standard_normal();
            let r = dot(&w) - y;
            losses.push(0.5 * r * r);
        }
        let m = crate::numerics::mean(&losses);
        let se = crate::numerics::sample_std(&losses) / (n as f64).sqrt();
        // per-sample half-quadratic loss averages e_g / 2
        assert!((2.0 * m - generalization_exact(&s)).abs() < 3.0 * 2.0 * se);
    }

    #[test]
    fn prediction_saturates_without_perpendicular_part() {
        // student = teacher's parallel part: exact fit when σ_e = 0
        let cfg = TeacherConfig { n_input: 6, n_hidden: 1, n_samples: 3, noise_std: 0.0, seed: 8 };
        let s = generate_teacher(&cfg).unwrap();
        let (par, _) = decompose_parallel_perp(&s.teacher, &s.x).unwrap();
        let fit = s.with_weights(par, DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let stats = teacher_stats(&fit).unwrap();
        let pred = generalization_predicted(&fit, &stats).unwrap();
        assert!(rel(pred, generalization_exact(&fit)) < 1e-10);
        // slope in ‖W₂W₁‖² is 1/N_i
        let doubled = fit.with_weights(fit.w1.scale(2.0), fit.w2.clone()).unwrap();
        assert!(matches!(generalization_predicted(&doubled, &stats), Err(Error::Unconverged { .. })));
    }

    #[test]
    fn prediction_slope_is_inverse_input_dimension() {
        let stats = TeacherStats { perp_norm_sq: 3.0, par_norm_sq: 1.0 };
        let cfg = TeacherConfig { n_input: 10, n_hidden: 7, n_samples: 5, noise_std: 0.0, seed: 8 };
        let s = generate_teacher(&cfg).unwrap();
        let (par, _) = decompose_parallel_perp(&s.teacher, &s.x).unwrap();
        let mut rng = RngStream::new(3, 0);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..5 {
            // add perpendicular components: fit unchanged, norm grows
            let extra = DenseMatrix::from_fn(1, 10, |_, _| rng.standard_normal());
            let (_, perp) = decompose_parallel_perp(&extra, &s.x).unwrap();
            let mut w1 = DenseMatrix::zeros(7, 10);
            let row = par.add(&perp).unwrap();
            w1.as_mut_slice()[..10].copy_from_slice(row.as_slice());
            let mut w2 = DenseMatrix::zeros(1, 7);
            w2[(0, 0)] = 1.0;
            let st = s.with_weights(w1, w2).unwrap();
            xs.push(st.product().frobenius_sq());
            ys.push(generalization_predicted(&st, &stats).unwrap());
        }
        let (slope, _) = linear_fit(&xs, &ys).unwrap();
        assert!((slope - 0.1).abs() < 1e-12);
    }

    #[test]
    fn trained_student_fits_and_reports() {
        let mut cfg = LinearSuiteConfig::defaults(3);
        cfg.runs = 2;
        cfg.steps = 5_000;
        let (base, records) = run_ensemble(&cfg).unwrap();
        assert_eq!(records.len(), 2);
        for r in &records {
            assert!(r.converged, "{r:?}");
            assert!(r.max_residual < RESIDUAL_TOLERANCE);
            assert!(r.eg_predicted.is_some());
            assert!(rel(r.trace_fd.unwrap(), r.trace_formula) < 1e-6);
            assert!(r.entropy.is_finite());
            assert_eq!(r.csv_row().split(',').count(), LinearRunRecord::CSV_HEADER.split(',').count());
        }
        let again = train_student(&base, &cfg, 3, 1).unwrap();
        assert_eq!(again, records[1]);
    }
}
