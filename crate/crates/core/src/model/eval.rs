use super::{Dataset, LossKind, NetworkSpec, ParamVector, PROBABILITY_CLAMP};
use crate::error::{Error, Result};

/// Per-layer pre-activations and activations of one forward pass.
struct Pass {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Pass {
    fn new(spec: &NetworkSpec) -> Self {
        let w = spec.widths();
        let max_w = *w.iter().max().unwrap();
        Self {
            acts: w.iter().map(|&n| vec![0.0; n]).collect(),
            pre: w[1..].iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::with_capacity(max_w),
            delta_next: Vec::with_capacity(max_w),
        }
    }

    fn forward(&mut self, spec: &NetworkSpec, theta: &[f64], x: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(x);
        let mut off = 0;
        for l in 0..spec.n_layers() {
            let (rows, cols) = spec.layer_shape(l);
            let act = spec.activations()[l];
            let (before, after) = self.acts.split_at_mut(l + 1);
            let input = &before[l];
            let output = &mut after[0];
            let pre = &mut self.pre[l];
            for r in 0..rows {
                let w_row = &theta[off + r * cols..off + (r + 1) * cols];
                let z: f64 = w_row.iter().zip(input.iter()).map(|(w, a)| w * a).sum();
                pre[r] = z;
                output[r] = act.apply(z);
            }
            off += rows * cols;
        }
        self.acts[spec.n_layers()][0]
    }

    /// Adds `scale · ∂l/∂θ` into `grad`, given `dl_dout = ∂l/∂(output pre-activation)`.
    fn backward(&mut self, spec: &NetworkSpec, theta: &[f64], dl_dpre_out: f64, scale: f64, grad: &mut [f64]) {
        let layers = spec.n_layers();
        self.delta.clear();
        self.delta.push(dl_dpre_out * scale);
        for l in (0..layers).rev() {
            let (rows, cols) = spec.layer_shape(l);
            let off = spec.layer_offset(l);
            let input = &self.acts[l];
            for r in 0..rows {
                let d = self.delta[r];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[off + r * cols..off + (r + 1) * cols];
                for (g, a) in g_row.iter_mut().zip(input.iter()) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let prev_act = spec.activations()[l - 1];
            self.delta_next.clear();
            self.delta_next.resize(cols, 0.0);
            for r in 0..rows {
                let d = self.delta[r];
                if d == 0.0 {
                    continue;
                }
                let w_row = &theta[off + r * cols..off + (r + 1) * cols];
                for (acc, w) in self.delta_next.iter_mut().zip(w_row) {
                    *acc += d * w;
                }
            }
            for c in 0..cols {
                self.delta_next[c] *= prev_act.derivative(self.pre[l - 1][c], self.acts[l][c]);
            }
            std::mem::swap(&mut self.delta, &mut self.delta_next);
        }
    }
}

/// Per-sample loss and its derivative with respect to the output
/// pre-activation. Returns `(loss, dloss, clamped)`.
fn sample_loss(spec: &NetworkSpec, pass: &Pass, output: f64, target: f64) -> (f64, f64, bool) {
    match spec.loss_kind() {
        LossKind::CrossEntropy => {
            let y = output.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            let clamped = y != output;
            let l = -target * y.ln() - (1.0 - target) * (1.0 - y).ln();
            // sigmoid output with cross-entropy: ∂l/∂z = y − t
            (l, output - target, clamped)
        }
        LossKind::HalfQuadratic => {
            let layers = spec.n_layers();
            let act = spec.activations()[layers - 1];
            let r = output - target;
            let d = act.derivative(pass.pre[layers - 1][0], output);
            (0.5 * r * r, r * d, false)
        }
    }
}

fn check_inputs(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<()> {
    spec.check_params(theta)?;
    data.check_for(spec)
}

/// Weight that turns per-sample losses into the data term of [`loss`]:
/// a mean for cross-entropy, a plain sum for the half-quadratic loss.
fn reduction_weight(spec: &NetworkSpec, n: usize) -> f64 {
    match spec.loss_kind() {
        LossKind::CrossEntropy => 1.0 / n as f64,
        LossKind::HalfQuadratic => 1.0,
    }
}

/// Network output for one input vector.
pub fn forward(spec: &NetworkSpec, theta: &ParamVector, x: &[f64]) -> Result<f64> {
    spec.check_params(theta)?;
    if x.len() != spec.n_input() {
        return Err(Error::Dimension(format!(
            "input of length {} for a network with {} inputs",
            x.len(),
            spec.n_input()
        )));
    }
    let mut pass = Pass::new(spec);
    let y = pass.forward(spec, theta, x);
    if !y.is_finite() {
        return Err(Error::NonFinite("network output"));
    }
    Ok(y)
}

/// Outputs for every sample of `data`.
pub fn predict(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<Vec<f64>> {
    check_inputs(spec, theta, data)?;
    let mut pass = Pass::new(spec);
    let out: Vec<f64> = (0..data.len())
        .map(|i| pass.forward(spec, theta, data.sample(i).0))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(out)
}

/// Decomposition of [`loss`] plus clamp diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub data_term: f64,
    pub regularizer: f64,
    pub total: f64,
    /// Samples whose predicted probability hit the cross-entropy clamp.
    pub clamped: usize,
}

pub fn loss_report(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<LossReport> {
    check_inputs(spec, theta, data)?;
    let mut pass = Pass::new(spec);
    let mut sum = 0.0;
    let mut clamped = 0;
    for i in 0..data.len() {
        let (x, t) = data.sample(i);
        let y = pass.forward(spec, theta, x);
        if !y.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        let (l, _, c) = sample_loss(spec, &pass, y, t);
        sum += l;
        clamped += c as usize;
    }
    let data_term = sum * reduction_weight(spec, data.len());
    let regularizer = 0.5 * spec.l2_lambda() * theta.norm_sq();
    Ok(LossReport {
        data_term,
        regularizer,
        total: data_term + regularizer,
        clamped,
    })
}

/// Cross-entropy: mean over samples plus `(λ/2)‖θ‖²`.
/// Half-quadratic: `(1/2)Σ(ŷ − y)²` plus `(λ/2)‖θ‖²`.
pub fn loss(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    Ok(loss_report(spec, theta, data)?.total)
}

/// Mean per-sample data loss, without the regularizer.
///
/// For the half-quadratic loss this is `(1/P)Σ(ŷ − y)²/2`.
pub fn mean_data_loss(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    let report = loss_report(spec, theta, data)?;
    let per_sample = report.data_term / reduction_weight(spec, data.len());
    Ok(per_sample / data.len() as f64)
}

/// Accumulates `weight·Σ_{i∈indices} l_i` and its gradient.
fn accumulate(
    spec: &NetworkSpec,
    theta: &[f64],
    data: &Dataset,
    indices: impl Iterator<Item = usize>,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let mut pass = Pass::new(spec);
    let mut sum = 0.0;
    for i in indices {
        let (x, t) = data.sample(i);
        let y = pass.forward(spec, theta, x);
        if !y.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        let (l, dl, _) = sample_loss(spec, &pass, y, t);
        sum += l;
        pass.backward(spec, theta, dl, weight, grad);
    }
    Ok(weight * sum)
}

fn finish(spec: &NetworkSpec, theta: &ParamVector, data_value: f64, mut grad: Vec<f64>) -> Result<(f64, ParamVector)> {
    let lambda = spec.l2_lambda();
    if lambda != 0.0 {
        for (g, w) in grad.iter_mut().zip(theta.iter()) {
            *g += lambda * w;
        }
    }
    let value = data_value + 0.5 * lambda * theta.norm_sq();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss gradient"));
    }
    Ok((value, ParamVector::new(grad)))
}

/// [`loss`] together with its exact gradient.
pub fn loss_and_gradient(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
) -> Result<(f64, ParamVector)> {
    check_inputs(spec, theta, data)?;
    let mut grad = vec![0.0; theta.len()];
    let w = reduction_weight(spec, data.len());
    let value = accumulate(spec, theta, data, 0..data.len(), w, &mut grad)?;
    finish(spec, theta, value, grad)
}

/// Exact reverse-mode gradient of [`loss`].
pub fn gradient(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<ParamVector> {
    Ok(loss_and_gradient(spec, theta, data)?.1)
}

/// The minibatch objective `(1/|B|)Σ_{i∈B} l_i + (λ/2)‖θ‖²` and its gradient.
///
/// This is what the optimizers descend. With `indices` covering the whole
/// dataset it coincides with [`loss`] for cross-entropy and with `loss/P`
/// (plus the unchanged regularizer) for the half-quadratic loss.
pub fn batch_objective(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, ParamVector)> {
    check_inputs(spec, theta, data)?;
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!("sample index {bad} out of range")));
    }
    let mut grad = vec![0.0; theta.len()];
    let w = 1.0 / indices.len() as f64;
    let value = accumulate(spec, theta, data, indices.iter().copied(), w, &mut grad)?;
    finish(spec, theta, value, grad)
}

/// Gradient of sample `index`'s data loss alone (no regularizer).
pub fn per_sample_gradient(
    spec: &NetworkSpec,
    theta: &ParamVector,
    index: usize,
    data: &Dataset,
) -> Result<ParamVector> {
    check_inputs(spec, theta, data)?;
    if index >= data.len() {
        return Err(Error::InvalidArgument(format!(
            "sample index {index} out of range for {} samples",
            data.len()
        )));
    }
    let mut grad = vec![0.0; theta.len()];
    accumulate(spec, theta, data, std::iter::once(index), 1.0, &mut grad)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("per-sample gradient"));
    }
    Ok(ParamVector::new(grad))
}

/// All per-sample data-loss gradients, one per row of `data`.
pub fn per_sample_gradients(
    spec: &NetworkSpec,
    theta: &ParamVector,
    data: &Dataset,
) -> Result<Vec<ParamVector>> {
    check_inputs(spec, theta, data)?;
    let mut pass = Pass::new(spec);
    (0..data.len())
        .map(|i| {
            let mut grad = vec![0.0; theta.len()];
            let (x, t) = data.sample(i);
            let y = pass.forward(spec, theta, x);
            if !y.is_finite() {
                return Err(Error::NonFinite("network output"));
            }
            let (_, dl, _) = sample_loss(spec, &pass, y, t);
            pass.backward(spec, theta, dl, 1.0, &mut grad);
            Ok(ParamVector::new(grad))
        })
        .collect()
}

/// Fraction of samples with `(ŷ ≥ 0.5) ≠ t`. An output of exactly 0.5
/// predicts class 1.
pub fn misclassification_rate(spec: &NetworkSpec, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let predictions = predict(spec, theta, data)?;
    let wrong = predictions
        .iter()
        .zip(data.targets())
        .filter(|(&y, &t)| (y >= 0.5) != (t == 1.0))
        .count();
    Ok(wrong as f64 / data.len() as f64)
}
