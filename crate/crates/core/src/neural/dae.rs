use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::backprop::minibatches;
use super::{sigmoid, Activation, DenseLayer, NeuralError, TrainConfig};

/// Denoising autoencoder with tied weights: the decoder multiplies by the
/// transpose of the encoder matrix, which is the only weight storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingAutoencoder {
    /// Sigmoid encoder, `(hidden, visible)`.
    pub encoder: DenseLayer,
    pub decoder_bias: Array1<f64>,
    pub corruption: f64,
}

/// Gradients of the mean reconstruction loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub decoder_bias: Array1<f64>,
}

/// Zeroes exactly `round(fraction · len)` coordinates chosen uniformly
/// without replacement.
pub fn corrupt<R: Rng + ?Sized>(x: &mut [f64], fraction: f64, rng: &mut R) {
    let k = ((fraction.clamp(0.0, 1.0) * x.len() as f64).round() as usize).min(x.len());
    if k == 0 {
        return;
    }
    for i in rand::seq::index::sample(rng, x.len(), k) {
        x[i] = 0.0;
    }
}

impl DenoisingAutoencoder {
    pub fn new<R: Rng + ?Sized>(visible: usize, hidden: usize, corruption: f64, rng: &mut R) -> Self {
        DenoisingAutoencoder {
            encoder: DenseLayer::uniform(visible, hidden, Activation::Sigmoid, rng),
            decoder_bias: Array1::zeros(visible),
            corruption,
        }
    }

    pub fn visible(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.outputs()
    }

    /// Hidden code `s(W x + b)`.
    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.encoder.forward(x)
    }

    /// Reconstruction `s(Wᵀ h + b′)`.
    pub fn decode(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = h.dot(&self.encoder.weights) + &self.decoder_bias;
        z.mapv_inplace(sigmoid);
        z
    }

    /// Hidden code and reconstruction of an (already corrupted) input batch.
    pub fn apply(&self, corrupted: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>), NeuralError> {
        self.encoder.check_input(corrupted)?;
        let h = self.encode(corrupted);
        let r = self.decode(h.view());
        Ok((h, r))
    }

    /// `(1/n) Σ ‖x − x′‖²` with `x′` reconstructed from the corrupted batch.
    pub fn reconstruction_loss(&self, clean: ArrayView2<'_, f64>, corrupted: ArrayView2<'_, f64>) -> Result<f64, NeuralError> {
        check_pair(clean, corrupted)?;
        let (_, r) = self.apply(corrupted)?;
        Ok((&r - &clean).mapv(|d| d * d).sum() / clean.nrows().max(1) as f64)
    }

    /// Analytic gradients; the encoder and decoder paths both contribute to W.
    pub fn gradients(&self, clean: ArrayView2<'_, f64>, corrupted: ArrayView2<'_, f64>) -> Result<DaeGradients, NeuralError> {
        check_pair(clean, corrupted)?;
        let (h, r) = self.apply(corrupted)?;
        let n = clean.nrows().max(1) as f64;
        // dL/d(decoder pre-activation), (n, visible)
        let mut d_out = (&r - &clean) * (2.0 / n);
        d_out.zip_mut_with(&r, |d, &y| *d *= y * (1.0 - y));
        // dL/d(encoder pre-activation), (n, hidden)
        let mut d_hidden = d_out.dot(&self.encoder.weights.t());
        d_hidden.zip_mut_with(&h, |d, &a| *d *= a * (1.0 - a));
        let weights = h.t().dot(&d_out) + d_hidden.t().dot(&corrupted);
        Ok(DaeGradients {
            weights,
            bias: d_hidden.sum_axis(Axis(0)),
            decoder_bias: d_out.sum_axis(Axis(0)),
        })
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.encoder.weights.iter().copied().collect();
        p.extend(self.encoder.bias.iter());
        p.extend(self.decoder_bias.iter());
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for v in self.encoder.weights.iter_mut().chain(self.encoder.bias.iter_mut()).chain(self.decoder_bias.iter_mut()) {
            *v = it.next().expect("parameter count");
        }
    }

    /// Minibatch SGD on the reconstruction loss. Each sample is corrupted
    /// afresh every time it is visited. Returns the mean batch loss per epoch.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        inputs: ArrayView2<'_, f64>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>, NeuralError> {
        self.encoder.check_input(inputs)?;
        if inputs.nrows() == 0 {
            return Err(NeuralError::Config("no training samples".into()));
        }
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 1..=epochs {
            let mut loss_sum = 0.0;
            for batch in minibatches(inputs.nrows(), batch_size, rng) {
                let clean = inputs.select(Axis(0), &batch);
                let mut noisy = clean.clone();
                for mut row in noisy.rows_mut() {
                    corrupt(row.as_slice_mut().expect("contiguous row"), self.corruption, rng);
                }
                let loss = self.reconstruction_loss(clean.view(), noisy.view())?;
                if !loss.is_finite() {
                    return Err(NeuralError::Divergence { epoch });
                }
                loss_sum += loss * batch.len() as f64;
                let g = self.gradients(clean.view(), noisy.view())?;
                self.encoder.weights.scaled_add(-learning_rate, &g.weights);
                self.encoder.bias.scaled_add(-learning_rate, &g.bias);
                self.decoder_bias.scaled_add(-learning_rate, &g.decoder_bias);
            }
            let mean = loss_sum / inputs.nrows() as f64;
            if !mean.is_finite() || !self.encoder.is_finite() {
                return Err(NeuralError::Divergence { epoch });
            }
            trace.push(mean);
        }
        Ok(trace)
    }

    /// [`train`](Self::train) driven by a [`TrainConfig`]'s pretraining settings.
    pub fn train_with<R: Rng + ?Sized>(
        &mut self,
        inputs: ArrayView2<'_, f64>,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>, NeuralError> {
        cfg.validate()?;
        self.corruption = cfg.corruption;
        self.train(inputs, cfg.pretrain_epochs, cfg.pretrain_learning_rate, cfg.batch_size, rng)
    }
}

fn check_pair(clean: ArrayView2<'_, f64>, corrupted: ArrayView2<'_, f64>) -> Result<(), NeuralError> {
    if clean.dim() != corrupted.dim() {
        return Err(NeuralError::Shape(format!("clean {:?} vs corrupted {:?}", clean.dim(), corrupted.dim())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn corruption_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let mut a = x.clone();
        corrupt(&mut a, 0.0, &mut rng);
        assert_eq!(a, x);
        let mut b = x.clone();
        corrupt(&mut b, 1.0, &mut rng);
        assert!(b.iter().all(|&v| v == 0.0));
        let mut c = x.clone();
        corrupt(&mut c, 0.3, &mut rng);
        assert_eq!(c.iter().filter(|&&v| v == 0.0).count(), 3);
        assert!(c.iter().zip(&x).all(|(n, o)| *n == 0.0 || n == o));
    }

    #[test]
    fn zero_weights_give_half() {
        let dae = DenoisingAutoencoder {
            encoder: DenseLayer::zeros(5, 3, Activation::Sigmoid),
            decoder_bias: Array1::zeros(5),
            corruption: 0.0,
        };
        let x = Array2::from_elem((2, 5), 0.7);
        let (h, r) = dae.apply(x.view()).unwrap();
        assert_eq!(h.dim(), (2, 3));
        assert_eq!(r.dim(), (2, 5));
        assert!(h.iter().chain(r.iter()).all(|&v| v == 0.5));
        assert!(dae.apply(Array2::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dae = DenoisingAutoencoder::new(6, 4, 0.2, &mut rng);
        let before = dae.clone();
        let x = Array2::from_shape_fn((10, 6), |(i, j)| ((i * 7 + j) % 5) as f64 / 5.0);
        dae.train(x.view(), 3, 0.0, 4, &mut rng).unwrap();
        assert_eq!(dae, before);
    }

    #[test]
    fn diverging_training_names_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dae = DenoisingAutoencoder::new(3, 2, 0.0, &mut rng);
        let x = Array2::from_elem((4, 3), f64::NAN);
        assert_eq!(dae.train(x.view(), 2, 0.1, 2, &mut rng), Err(NeuralError::Divergence { epoch: 1 }));
    }
}
