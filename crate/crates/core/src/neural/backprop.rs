use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{Activation, DenseLayer};

/// Gradient of a loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend(self.weights.iter());
        out.extend(self.bias.iter());
    }
}

/// Activations of every layer; index 0 is the input.
pub(crate) fn forward_trace(layers: &[&DenseLayer], x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_owned());
    for layer in layers {
        let next = layer.forward(acts.last().expect("non-empty").view());
        acts.push(next);
    }
    acts
}

/// Backpropagates `output_delta` (loss gradient w.r.t. the last layer's
/// pre-activation) through a chain of layers.
pub(crate) fn backward(layers: &[&DenseLayer], acts: &[Array2<f64>], output_delta: Array2<f64>) -> Vec<LayerGrad> {
    let mut grads = Vec::with_capacity(layers.len());
    let mut delta = output_delta;
    for i in (0..layers.len()).rev() {
        grads.push(LayerGrad { weights: delta.t().dot(&acts[i]), bias: delta.sum_axis(Axis(0)) });
        if i > 0 {
            let mut back = delta.dot(&layers[i].weights);
            match layers[i - 1].activation {
                Activation::Sigmoid => back.zip_mut_with(&acts[i], |d, &a| *d *= a * (1.0 - a)),
                Activation::Identity => {}
                Activation::Softmax => unreachable!("softmax is only used as an output layer"),
            }
            delta = back;
        }
    }
    grads.reverse();
    grads
}

pub(crate) fn sgd_step(layer: &mut DenseLayer, grad: &LayerGrad, step: f64) {
    layer.weights.scaled_add(-step, &grad.weights);
    layer.bias.scaled_add(-step, &grad.bias);
}

/// Central finite differences of `loss` around `params`.
pub fn numeric_gradient(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], step: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = loss(&p);
            p[i] = orig - step;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm(a) + norm(b);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

pub(crate) fn flatten_layers<'a>(layers: impl IntoIterator<Item = &'a DenseLayer>) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Overwrites layer parameters from a flat slice; returns the count consumed.
pub(crate) fn unflatten_layers<'a>(layers: impl IntoIterator<Item = &'a mut DenseLayer>, params: &[f64]) -> usize {
    let mut at = 0;
    for l in layers {
        for w in l.weights.iter_mut() {
            *w = params[at];
            at += 1;
        }
        for b in l.bias.iter_mut() {
            *b = params[at];
            at += 1;
        }
    }
    at
}

/// Shuffled minibatch index lists.
pub(crate) fn minibatches<R: rand::Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}
