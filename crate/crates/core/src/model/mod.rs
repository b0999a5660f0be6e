//! Bias-free fully-connected networks, their losses and exact gradients.
//!
//! # Parameter layout
//!
//! A network with widths `[n0, n1, …, nL]` has weight matrices
//! `W1 ∈ ℝ^{n1×n0}, …, WL ∈ ℝ^{nL×n(L−1)}`. The flat [`ParamVector`] stores
//! them layer-major (W1 first), each matrix row-major, so entry `(r, c)` of
//! layer `l` lives at `offset(l) + r·n(l−1) + c`. Every Hessian row and
//! column in this crate is indexed by that layout.

mod checkpoint;
mod eval;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use eval::{
    batch_objective, forward, gradient, loss, loss_and_gradient, loss_report,
    mean_data_loss, misclassification_rate, per_sample_gradient, per_sample_gradients,
    predict, LossReport,
};

use std::ops::{Deref, DerefMut};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, DenseMatrix, RngStream};

/// Probability clamp applied before taking logs in the cross-entropy.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    /// The relu derivative at exactly zero is 0.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean binary cross-entropy over samples.
    CrossEntropy,
    /// `(1/2)·Σᵢ (ŷᵢ − yᵢ)²`, summed (not averaged) over samples.
    HalfQuadratic,
}

/// Architecture, loss and L2 strength of a network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    loss: LossKind,
    l2_lambda: f64,
}

impl NetworkSpec {
    /// `activations[l]` follows weight matrix `l`, so there is one fewer
    /// activation than widths.
    pub fn new(
        widths: Vec<usize>,
        activations: Vec<Activation>,
        loss: LossKind,
        l2_lambda: f64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least two layers".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be ≥ 1".into()));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} activations for {} weight matrices",
                activations.len(),
                widths.len() - 1
            )));
        }
        if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "l2 lambda must be finite and ≥ 0, got {l2_lambda}"
            )));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(
                "only scalar-output networks are supported".into(),
            ));
        }
        if loss == LossKind::CrossEntropy && *activations.last().unwrap() != Activation::Sigmoid {
            return Err(Error::InvalidArgument(
                "cross-entropy requires a sigmoid output".into(),
            ));
        }
        Ok(Self {
            widths,
            activations,
            loss,
            l2_lambda,
        })
    }

    /// The 100-10-10-10-10-1 image classifier: sigmoid after the first and
    /// last matrices, relu in between. 1310 parameters.
    pub fn image_classifier(l2_lambda: f64) -> Self {
        Self::classifier(&[100, 10, 10, 10, 10, 1], l2_lambda)
    }

    /// Classifier with the same activation pattern as [`Self::image_classifier`]
    /// for arbitrary widths: sigmoid, relu…, sigmoid.
    pub fn classifier(widths: &[usize], l2_lambda: f64) -> Self {
        let layers = widths.len() - 1;
        let activations = (0..layers)
            .map(|l| {
                if l == 0 || l == layers - 1 {
                    Activation::Sigmoid
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self::new(
            widths.to_vec(),
            activations,
            LossKind::CrossEntropy,
            l2_lambda,
        )
        .expect("valid classifier widths")
    }

    /// Two-matrix linear network `ŷ = W2·W1·x` with half-quadratic loss.
    pub fn deep_linear(n_input: usize, n_hidden: usize, l2_lambda: f64) -> Result<Self> {
        Self::new(
            vec![n_input, n_hidden, 1],
            vec![Activation::Identity; 2],
            LossKind::HalfQuadratic,
            l2_lambda,
        )
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn l2_lambda(&self) -> f64 {
        self.l2_lambda
    }

    pub fn with_l2_lambda(&self, l2_lambda: f64) -> Result<Self> {
        Self::new(
            self.widths.clone(),
            self.activations.clone(),
            self.loss,
            l2_lambda,
        )
    }

    pub fn n_input(&self) -> usize {
        self.widths[0]
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Shape `(rows, cols)` of weight matrix `l` (0-based).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.widths[l + 1], self.widths[l])
    }

    /// Offset of weight matrix `l` inside the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.widths
            .windows(2)
            .take(l)
            .map(|w| w[0] * w[1])
            .sum()
    }

    /// Total parameter count `N = Σ n(l)·n(l+1)`.
    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "parameter vector of length {} for a network with {} parameters",
                theta.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    /// Every entry drawn independently from N(0, std²).
    pub fn init_gaussian(&self, std: f64, rng: &mut RngStream) -> Result<ParamVector> {
        (0..self.n_params())
            .map(|_| gaussian_sample(rng, 0.0, std))
            .collect::<Result<Vec<_>>>()
            .map(ParamVector::new)
    }

    /// Weight matrix `l` copied out of `theta`.
    pub fn layer_matrix(&self, theta: &ParamVector, l: usize) -> DenseMatrix {
        let (r, c) = self.layer_shape(l);
        let off = self.layer_offset(l);
        DenseMatrix::from_vec(r, c, theta[off..off + r * c].to_vec())
            .expect("layer slice has matching length")
    }
}

/// Flat parameter vector θ in the canonical layout described at module level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Inputs (one sample per row) and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DenseMatrix,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, targets: Vec<f64>) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn sample(&self, i: usize) -> (&[f64], f64) {
        (self.inputs.row(i), self.targets[i])
    }

    pub fn is_binary(&self) -> bool {
        self.targets.iter().all(|&t| t == 0.0 || t == 1.0)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "sample index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let cols = self.n_features();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        Self::new(
            DenseMatrix::from_vec(indices.len(), cols, data)?,
            indices.iter().map(|&i| self.targets[i]).collect(),
        )
    }

    /// Checks the dataset is usable with `spec`.
    pub fn check_for(&self, spec: &NetworkSpec) -> Result<()> {
        if self.n_features() != spec.n_input() {
            return Err(Error::Dimension(format!(
                "{} features for a network with {} inputs",
                self.n_features(),
                spec.n_input()
            )));
        }
        if spec.loss_kind() == LossKind::CrossEntropy && !self.is_binary() {
            return Err(Error::InvalidArgument(
                "classification targets must be 0 or 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_classifier_has_1310_parameters() {
        let spec = NetworkSpec::image_classifier(1e-7);
        assert_eq!(spec.n_params(), 1310);
        assert_eq!(spec.layer_offset(4), 1300);
        assert_eq!(spec.layer_shape(0), (10, 100));
        assert_eq!(
            spec.activations(),
            &[
                Activation::Sigmoid,
                Activation::Relu,
                Activation::Relu,
                Activation::Relu,
                Activation::Sigmoid
            ]
        );
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(vec![3], vec![], LossKind::HalfQuadratic, 0.0).is_err());
        assert!(NetworkSpec::new(
            vec![3, 0, 1],
            vec![Activation::Relu; 2],
            LossKind::HalfQuadratic,
            0.0
        )
        .is_err());
        assert!(NetworkSpec::new(
            vec![3, 1],
            vec![Activation::Relu],
            LossKind::CrossEntropy,
            0.0
        )
        .is_err());
        assert!(NetworkSpec::new(
            vec![3, 2],
            vec![Activation::Sigmoid],
            LossKind::CrossEntropy,
            0.0
        )
        .is_err());
        assert!(NetworkSpec::deep_linear(3, 2, -1.0).is_err());
    }

    #[test]
    fn dataset_checks() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!(Dataset::new(x.clone(), vec![1.0]).is_err());
        let d = Dataset::new(x, vec![0.0, 0.5]).unwrap();
        assert!(!d.is_binary());
        let spec = NetworkSpec::classifier(&[2, 3, 1], 0.0);
        assert!(d.check_for(&spec).is_err());
        let sub = d.subset(&[1]).unwrap();
        assert_eq!(sub.sample(0), (&[3.0, 4.0][..], 0.5));
        assert!(d.subset(&[2]).is_err());
    }
}
