//! Dense neural machinery written from scratch: sigmoid and softmax layers,
//! tied-weight denoising autoencoders, the stacked demand classifier, the
//! three-layer emission regressor, SGD training and checkpoints.
//!
//! All matrices are `f64`. Batches are stored `(samples, features)`; a layer's
//! weight matrix is `(outputs, inputs)`.

mod backprop;
pub mod checkpoint;
mod dae;
mod pnn;
mod sdae;

pub use backprop::{numeric_gradient, relative_error, LayerGrad};
pub use dae::{corrupt, DaeGradients, DenoisingAutoencoder};
pub use pnn::{Pnn3, RegressionReport, DEFAULT_PNN_HIDDEN};
pub use sdae::{nll, FineTuneReport, Sdae, SDAE4_HIDDEN};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn code(&self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// Logistic function, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(outputs, inputs)`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights uniform in ±√(6/(inputs+outputs)), zero bias.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-limit..limit));
        DenseLayer { weights, bias: Array1::zeros(outputs), activation }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer { weights: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs), activation }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn pre_activation(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = self.pre_activation(x);
        match self.activation {
            Activation::Identity => {}
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softmax => softmax_rows(&mut z),
        }
        z
    }

    pub(crate) fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.inputs() {
            return Err(NeuralError::Shape(format!("input width {} vs layer width {}", x.ncols(), self.inputs())));
        }
        Ok(())
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of input coordinates zeroed during pretraining.
    pub corruption: f64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            corruption: 0.2,
            pretrain_epochs: 30,
            pretrain_learning_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.pretrain_learning_rate > 0.0 && self.pretrain_learning_rate.is_finite())
        {
            return Err(NeuralError::Config("learning rates must be finite and positive".into()));
        }
        if self.epochs == 0 {
            return Err(NeuralError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(NeuralError::Config(format!("corruption {} outside [0, 1]", self.corruption)));
        }
        Ok(())
    }
}

/// Per-dimension affine input transform `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Standardizer { mean: vec![0.0; width], scale: vec![1.0; width] }
    }

    /// Z-score statistics of `rows`; constant dimensions keep scale 1.
    pub fn fit(rows: ArrayView2<'_, f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean = rows.sum_axis(Axis(0)) / n;
        let mut scale = Vec::with_capacity(rows.ncols());
        for (j, col) in rows.columns().into_iter().enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            scale.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
        }
        Standardizer { mean: mean.to_vec(), scale }
    }

    /// Maps the observed range of each dimension onto [0, 1]; constant
    /// dimensions are shifted to 0 with scale 1.
    pub fn fit_minmax(rows: ArrayView2<'_, f64>) -> Self {
        let mut mean = Vec::with_capacity(rows.ncols());
        let mut scale = Vec::with_capacity(rows.ncols());
        for col in rows.columns() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            mean.push(if lo.is_finite() { lo } else { 0.0 });
            scale.push(if hi > lo && (hi - lo).is_finite() { hi - lo } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>, NeuralError> {
        if rows.ncols() != self.width() {
            return Err(NeuralError::Shape(format!("standardizer width {} vs {}", self.width(), rows.ncols())));
        }
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Stacks equal-length feature vectors into a `(samples, width)` matrix.
pub fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, NeuralError> {
    let width = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(NeuralError::Shape(format!("ragged rows: {} vs {}", r.len(), width)));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| NeuralError::Shape(e.to_string()))
}
