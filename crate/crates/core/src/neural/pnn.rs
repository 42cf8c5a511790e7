use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::backprop::{backward, flatten_layers, forward_trace, minibatches, sgd_step, unflatten_layers, LayerGrad};
use super::{Activation, DenseLayer, NeuralError, TrainConfig};

pub const DEFAULT_PNN_HIDDEN: usize = 32;

/// Three-layer perceptron (input, sigmoid hidden, identity output) regressing
/// a non-negative scalar. Targets are standardized internally with
/// `target_mean` / `target_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pnn3 {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    pub target_mean: f64,
    pub target_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionReport {
    /// Mean squared error on standardized targets, per epoch.
    pub train_mse: Vec<f64>,
    /// Validation RMSE in target units, per epoch.
    pub val_rmse: Vec<f64>,
    pub best_epoch: usize,
}

impl Pnn3 {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Pnn3 {
            hidden: DenseLayer::uniform(input, hidden, Activation::Sigmoid, rng),
            output: DenseLayer::uniform(hidden, 1, Activation::Identity, rng),
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.inputs()
    }

    fn chain(&self) -> [&DenseLayer; 2] {
        [&self.hidden, &self.output]
    }

    /// Network output in standardized target units.
    pub fn forward_std(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, NeuralError> {
        self.hidden.check_input(x)?;
        let h = self.hidden.forward(x);
        Ok(self.output.forward(h.view()).column(0).to_owned())
    }

    /// Predictions in target units, clamped at zero.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>, NeuralError> {
        Ok(self.forward_std(x)?.iter().map(|&o| (o * self.target_scale + self.target_mean).max(0.0)).collect())
    }

    fn standardize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.target_mean) / self.target_scale).collect()
    }

    /// Summed squared error `Σ (o − t)²` against standardized targets `t`.
    pub fn squared_error(&self, x: ArrayView2<'_, f64>, targets_std: &[f64]) -> Result<f64, NeuralError> {
        let o = self.forward_std(x)?;
        check_len(o.len(), targets_std.len())?;
        Ok(o.iter().zip(targets_std).map(|(a, b)| (a - b).powi(2)).sum())
    }

    /// Gradient of [`squared_error`](Self::squared_error) for hidden then output layer.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, targets_std: &[f64]) -> Result<Vec<LayerGrad>, NeuralError> {
        self.hidden.check_input(x)?;
        check_len(x.nrows(), targets_std.len())?;
        let chain = self.chain();
        let acts = forward_trace(&chain, x);
        let out = acts.last().expect("output");
        let delta = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| 2.0 * (out[[i, 0]] - targets_std[i]));
        Ok(backward(&chain, &acts, delta))
    }

    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(self.chain())
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        unflatten_layers([&mut self.hidden, &mut self.output], params);
    }

    fn rmse(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<f64, NeuralError> {
        let p = self.predict(x)?;
        Ok((p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len().max(1) as f64).sqrt())
    }

    /// Fits target statistics on `y`, then runs minibatch SGD for
    /// `cfg.epochs`. With validation data the lowest-RMSE epoch is kept.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: &[f64],
        val: Option<(ArrayView2<'_, f64>, &[f64])>,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<RegressionReport, NeuralError> {
        cfg.validate()?;
        self.hidden.check_input(x)?;
        check_len(x.nrows(), y.len())?;
        if y.is_empty() {
            return Err(NeuralError::Config("no training samples".into()));
        }
        let n = y.len() as f64;
        self.target_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - self.target_mean).powi(2)).sum::<f64>() / n).sqrt();
        self.target_scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        let t = self.standardize(y);
        let val = val.filter(|(vx, _)| vx.nrows() > 0);
        if let Some((vx, vy)) = val {
            self.hidden.check_input(vx)?;
            check_len(vx.nrows(), vy.len())?;
        }

        let mut report = RegressionReport::default();
        let mut best: Option<(f64, Pnn3)> = None;
        for epoch in 1..=cfg.epochs {
            for batch in minibatches(y.len(), cfg.batch_size, rng) {
                let bx = x.select(Axis(0), &batch);
                let bt: Vec<f64> = batch.iter().map(|&i| t[i]).collect();
                let g = self.gradients(bx.view(), &bt)?;
                let step = cfg.learning_rate / batch.len() as f64;
                sgd_step(&mut self.hidden, &g[0], step);
                sgd_step(&mut self.output, &g[1], step);
            }
            let mse = self.squared_error(x, &t)? / n;
            if !mse.is_finite() || !self.hidden.is_finite() || !self.output.is_finite() {
                return Err(NeuralError::Divergence { epoch });
            }
            report.train_mse.push(mse);
            if let Some((vx, vy)) = val {
                let r = self.rmse(vx, vy)?;
                report.val_rmse.push(r);
                if best.as_ref().is_none_or(|(b, _)| r < *b) {
                    best = Some((r, self.clone()));
                    report.best_epoch = epoch;
                }
            } else {
                report.best_epoch = epoch;
            }
        }
        if let Some((_, model)) = best {
            *self = model;
        }
        Ok(report)
    }
}

fn check_len(a: usize, b: usize) -> Result<(), NeuralError> {
    if a != b {
        return Err(NeuralError::Shape(format!("{a} rows vs {b} targets")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_predict_output_bias() {
        let mut m = Pnn3 {
            hidden: DenseLayer::zeros(3, 4, Activation::Sigmoid),
            output: DenseLayer::zeros(4, 1, Activation::Identity),
            target_mean: 0.0,
            target_scale: 1.0,
        };
        m.output.bias[0] = 2.5;
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(m.predict(x.view()).unwrap(), vec![2.5; 5]);
        m.output.bias[0] = -1.0;
        assert_eq!(m.predict(x.view()).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn learns_linear_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((300, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = x.rows().into_iter().map(|r| 10.0 + 3.0 * r[0] - 2.0 * r[1] + r[2]).collect();
        let mut m = Pnn3::new(3, 8, &mut rng);
        let cfg = TrainConfig { epochs: 200, learning_rate: 0.1, batch_size: 16, ..Default::default() };
        m.train(x.slice(ndarray::s![..240, ..]), &y[..240], None, &cfg, &mut rng).unwrap();
        let test = &y[240..];
        let mean = test.iter().sum::<f64>() / test.len() as f64;
        let sd = (test.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / test.len() as f64).sqrt();
        let rmse = m.rmse(x.slice(ndarray::s![240.., ..]), test).unwrap();
        assert!(rmse < 0.2 * sd, "rmse {rmse} sd {sd}");
    }
}
