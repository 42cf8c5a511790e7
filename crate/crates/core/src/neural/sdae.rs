use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::backprop::{backward, flatten_layers, forward_trace, minibatches, sgd_step, unflatten_layers, LayerGrad};
use super::{argmax, Activation, DenoisingAutoencoder, DenseLayer, NeuralError, TrainConfig};

pub const SDAE4_HIDDEN: [usize; 4] = [100; 4];

/// Stack of denoising autoencoders topped by a softmax head. With no
/// autoencoder layers it is a plain softmax (multinomial logistic) classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sdae {
    pub layers: Vec<DenoisingAutoencoder>,
    pub head: DenseLayer,
}

/// Per-epoch fine-tuning record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FineTuneReport {
    /// Mean training NLL per sample, one entry per epoch.
    pub train_nll: Vec<f64>,
    /// Mean validation NLL per sample (empty without validation data).
    pub val_nll: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl FineTuneReport {
    pub fn best_val_nll(&self) -> Option<f64> {
        self.val_nll.get(self.best_epoch.checked_sub(1)?).copied()
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.val_accuracy.get(self.best_epoch.checked_sub(1)?).copied()
    }
}

/// Summed negative log-likelihood of `labels` under row-wise class
/// probabilities.
pub fn nll(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, NeuralError> {
    if probs.nrows() != labels.len() {
        return Err(NeuralError::Shape(format!("{} rows vs {} labels", probs.nrows(), labels.len())));
    }
    let classes = probs.ncols();
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= classes {
            return Err(NeuralError::Label { label: y, classes });
        }
        total -= row[y].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total)
}

impl Sdae {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], classes: usize, corruption: f64, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for &h in hidden {
            layers.push(DenoisingAutoencoder::new(width, h, corruption, rng));
            width = h;
        }
        let head = DenseLayer::uniform(width, classes, Activation::Softmax, rng);
        Sdae { layers, head }
    }

    /// Four 100-unit hidden layers.
    pub fn sdae4<R: Rng + ?Sized>(input: usize, classes: usize, corruption: f64, rng: &mut R) -> Self {
        Self::new(input, &SDAE4_HIDDEN, classes, corruption, rng)
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(self.head.inputs(), DenoisingAutoencoder::visible)
    }

    pub fn classes(&self) -> usize {
        self.head.outputs()
    }

    fn chain(&self) -> Vec<&DenseLayer> {
        self.layers.iter().map(|d| &d.encoder).chain(std::iter::once(&self.head)).collect()
    }

    fn check(&self, x: ArrayView2<'_, f64>, labels: Option<&[usize]>) -> Result<(), NeuralError> {
        if x.ncols() != self.input_width() {
            return Err(NeuralError::Shape(format!("input width {} vs network width {}", x.ncols(), self.input_width())));
        }
        if let Some(labels) = labels {
            if labels.len() != x.nrows() {
                return Err(NeuralError::Shape(format!("{} rows vs {} labels", x.nrows(), labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes()) {
                return Err(NeuralError::Label { label: bad, classes: self.classes() });
            }
        }
        Ok(())
    }

    /// Clean inputs seen by each autoencoder layer: entry k is the
    /// corruption-free encoding of `x` by layers `0..k`.
    pub fn layer_inputs(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>, NeuralError> {
        self.check(x, None)?;
        let mut out = vec![x.to_owned()];
        for dae in &self.layers[..self.layers.len().saturating_sub(1)] {
            let next = dae.encode(out.last().expect("non-empty").view());
            out.push(next);
        }
        Ok(out)
    }

    /// Greedy bottom-up pretraining; returns each layer's loss trace.
    pub fn pretrain<R: Rng + ?Sized>(&mut self, x: ArrayView2<'_, f64>, cfg: &TrainConfig, rng: &mut R) -> Result<Vec<Vec<f64>>, NeuralError> {
        cfg.validate()?;
        self.check(x, None)?;
        let mut input = x.to_owned();
        let mut traces = Vec::with_capacity(self.layers.len());
        for dae in &mut self.layers {
            traces.push(dae.train_with(input.view(), cfg, rng)?);
            input = dae.encode(input.view());
        }
        Ok(traces)
    }

    /// Top hidden representation (no corruption).
    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NeuralError> {
        self.check(x, None)?;
        let mut h = x.to_owned();
        for dae in &self.layers {
            h = dae.encode(h.view());
        }
        Ok(h)
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NeuralError> {
        let h = self.encode(x)?;
        Ok(self.head.forward(h.view()))
    }

    /// Class probabilities and argmax class per row.
    pub fn classify(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<usize>), NeuralError> {
        let p = self.predict_proba(x)?;
        let classes = p.rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous row"))).collect();
        Ok((p, classes))
    }

    pub fn nll(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, NeuralError> {
        self.check(x, Some(labels))?;
        nll(self.predict_proba(x)?.view(), labels)
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, NeuralError> {
        self.check(x, Some(labels))?;
        let (_, pred) = self.classify(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    /// Gradients of the summed NLL for every encoder layer and the head.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<LayerGrad>, NeuralError> {
        self.check(x, Some(labels))?;
        let chain = self.chain();
        let acts = forward_trace(&chain, x);
        let mut delta = acts.last().expect("output").clone();
        for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        Ok(backward(&chain, &acts, delta))
    }

    /// Encoder and head parameters in layer order (decoder biases excluded;
    /// they do not affect classification).
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(self.chain())
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let layers = self.layers.iter_mut().map(|d| &mut d.encoder).chain(std::iter::once(&mut self.head));
        unflatten_layers(layers, params);
    }

    fn is_finite(&self) -> bool {
        self.layers.iter().all(|d| d.encoder.is_finite()) && self.head.is_finite()
    }

    /// Minibatch SGD on the NLL through every layer, `cfg.epochs` epochs.
    /// With validation data the parameters of the epoch with the lowest
    /// validation NLL are kept; otherwise the last epoch's.
    pub fn fine_tune<R: Rng + ?Sized>(
        &mut self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        val: Option<(ArrayView2<'_, f64>, &[usize])>,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<FineTuneReport, NeuralError> {
        cfg.validate()?;
        self.check(x, Some(labels))?;
        if x.nrows() == 0 {
            return Err(NeuralError::Config("no training samples".into()));
        }
        let val = val.filter(|(vx, _)| vx.nrows() > 0);
        if let Some((vx, vy)) = val {
            self.check(vx, Some(vy))?;
        }
        let mut report = FineTuneReport::default();
        let mut best: Option<(f64, Sdae)> = None;
        for epoch in 1..=cfg.epochs {
            for batch in minibatches(x.nrows(), cfg.batch_size, rng) {
                let bx = x.select(Axis(0), &batch);
                let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let grads = self.gradients(bx.view(), &by)?;
                let step = cfg.learning_rate / batch.len() as f64;
                for (dae, g) in self.layers.iter_mut().zip(&grads) {
                    sgd_step(&mut dae.encoder, g, step);
                }
                sgd_step(&mut self.head, grads.last().expect("head gradient"), step);
            }
            if !self.is_finite() {
                return Err(NeuralError::Divergence { epoch });
            }
            let mean = self.nll(x, labels)? / x.nrows() as f64;
            if !mean.is_finite() {
                return Err(NeuralError::Divergence { epoch });
            }
            report.train_nll.push(mean);
            if let Some((vx, vy)) = val {
                let v = self.nll(vx, vy)? / vx.nrows() as f64;
                report.val_nll.push(v);
                report.val_accuracy.push(self.accuracy(vx, vy)?);
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, self.clone()));
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

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nll_edge_cases() {
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(nll(p.view(), &[1, 0]).unwrap(), 0.0);
        let u = Array2::from_elem((5, 8), 0.125);
        assert!((nll(u.view(), &[0, 1, 2, 3, 7]).unwrap() - 5.0 * 8f64.ln()).abs() < 1e-12);
        assert!(nll(u.view(), &[0, 1, 2, 3, 8]).is_err());
    }

    #[test]
    fn softmax_only_has_no_hidden_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Sdae::new(7, &[], 8, 0.2, &mut rng);
        assert_eq!(m.input_width(), 7);
        assert_eq!(m.classes(), 8);
        let (p, _) = m.classify(Array2::zeros((3, 7)).view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_data_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Sdae::new(4, &[6, 5], 8, 0.2, &mut rng);
        let x = Array2::from_shape_fn((40, 4), |(i, j)| ((i + j) % 7) as f64 / 7.0);
        let y = vec![3; 40];
        let cfg = TrainConfig { epochs: 60, learning_rate: 0.5, batch_size: 8, ..Default::default() };
        m.fine_tune(x.view(), &y, None, &cfg, &mut rng).unwrap();
        let (_, pred) = m.classify(x.view()).unwrap();
        assert!(pred.iter().all(|&c| c == 3));
    }

    #[test]
    fn rejects_bad_labels_and_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Sdae::new(3, &[2], 4, 0.0, &mut rng);
        let x = Array2::zeros((2, 3));
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(m.fine_tune(x.view(), &[0, 4], None, &cfg, &mut rng), Err(NeuralError::Label { .. })));
        assert!(matches!(m.predict_proba(Array2::zeros((1, 2)).view()), Err(NeuralError::Shape(_))));
    }
}
