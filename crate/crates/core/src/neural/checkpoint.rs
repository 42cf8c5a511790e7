//! Versioned binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CLVNNET\0"
//! version  u32
//! kind     u32      1 = classifier, 2 = regressor
//! layers   u32      L
//! widths   u32 × (L + 1)   input width, then each layer's output width
//! acts     u32 × L         activation codes
//! payload  per layer: W row-major (out × in) f64, then b f64
//! aux      u32 count, then per entry: u32 tag, u64 length, f64 × length
//! ```
//!
//! Aux tags: 1 input mean, 2 input scale, 3 target mean and scale,
//! 4 corruption fraction, 16 + i decoder bias of autoencoder i.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use super::{Activation, DenoisingAutoencoder, DenseLayer, NeuralError, Pnn3, Sdae, Standardizer};

pub const MAGIC: [u8; 8] = *b"CLVNNET\0";
pub const VERSION: u32 = 1;

const KIND_CLASSIFIER: u32 = 1;
const KIND_REGRESSOR: u32 = 2;
const TAG_MEAN: u32 = 1;
const TAG_SCALE: u32 = 2;
const TAG_TARGET: u32 = 3;
const TAG_CORRUPTION: u32 = 4;
const TAG_DECODER_BIAS: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Classifier(Sdae),
    Regressor(Pnn3),
}

/// A network together with the input standardization it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub scaler: Standardizer,
    pub net: Network,
}

impl TrainedModel {
    pub fn input_width(&self) -> usize {
        self.scaler.width()
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.net, Network::Classifier(_))
    }

    /// Class probabilities and predicted class for raw feature rows.
    pub fn predict_class(&self, raw: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<usize>), NeuralError> {
        match &self.net {
            Network::Classifier(m) => m.classify(self.scaler.apply(raw)?.view()),
            Network::Regressor(_) => Err(NeuralError::Config("model is a regressor".into())),
        }
    }

    /// Non-negative regression output for raw feature rows.
    pub fn predict_value(&self, raw: ArrayView2<'_, f64>) -> Result<Vec<f64>, NeuralError> {
        match &self.net {
            Network::Regressor(m) => m.predict(self.scaler.apply(raw)?.view()),
            Network::Classifier(_) => Err(NeuralError::Config("model is a classifier".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, layers): (u32, Vec<&DenseLayer>) = match &self.net {
            Network::Classifier(m) => {
                (KIND_CLASSIFIER, m.layers.iter().map(|d| &d.encoder).chain(std::iter::once(&m.head)).collect())
            }
            Network::Regressor(m) => (KIND_REGRESSOR, vec![&m.hidden, &m.output]),
        };
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, kind);
        put_u32(&mut out, layers.len() as u32);
        put_u32(&mut out, layers.first().map_or(0, |l| l.inputs()) as u32);
        for l in &layers {
            put_u32(&mut out, l.outputs() as u32);
        }
        for l in &layers {
            put_u32(&mut out, l.activation.code());
        }
        for l in &layers {
            for &w in l.weights.iter() {
                put_f64(&mut out, w);
            }
            for &b in l.bias.iter() {
                put_f64(&mut out, b);
            }
        }

        let mut aux: Vec<(u32, Vec<f64>)> = vec![(TAG_MEAN, self.scaler.mean.clone()), (TAG_SCALE, self.scaler.scale.clone())];
        match &self.net {
            Network::Classifier(m) => {
                if let Some(first) = m.layers.first() {
                    aux.push((TAG_CORRUPTION, vec![first.corruption]));
                }
                for (i, d) in m.layers.iter().enumerate() {
                    aux.push((TAG_DECODER_BIAS + i as u32, d.decoder_bias.to_vec()));
                }
            }
            Network::Regressor(m) => aux.push((TAG_TARGET, vec![m.target_mean, m.target_scale])),
        }
        put_u32(&mut out, aux.len() as u32);
        for (tag, values) in aux {
            put_u32(&mut out, tag);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                put_f64(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let mut r = Cursor { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = r.u32()?;
        let count = r.u32()? as usize;
        if count == 0 || count > 64 {
            return Err(bad(&format!("implausible layer count {count}")));
        }
        let widths = (0..=count).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
        let acts = (0..count)
            .map(|_| {
                let code = r.u32()?;
                Activation::from_code(code).ok_or_else(|| bad(&format!("unknown activation code {code}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let (inp, outp) = (widths[i], widths[i + 1]);
            let w = r.f64s(inp.checked_mul(outp).ok_or_else(|| bad("width overflow"))?)?;
            let b = r.f64s(outp)?;
            layers.push(DenseLayer {
                weights: Array2::from_shape_vec((outp, inp), w).map_err(|e| bad(&e.to_string()))?,
                bias: Array1::from(b),
                activation: acts[i],
            });
        }

        let mut mean = None;
        let mut scale = None;
        let mut target = None;
        let mut corruption = 0.0;
        let mut decoder_biases = vec![None; count];
        for _ in 0..r.u32()? {
            let tag = r.u32()?;
            let len = usize::try_from(r.u64()?).map_err(|_| bad("aux length overflow"))?;
            let values = r.f64s(len)?;
            match tag {
                TAG_MEAN => mean = Some(values),
                TAG_SCALE => scale = Some(values),
                TAG_TARGET if len == 2 => target = Some((values[0], values[1])),
                TAG_CORRUPTION if len == 1 => corruption = values[0],
                t if t >= TAG_DECODER_BIAS && ((t - TAG_DECODER_BIAS) as usize) < count => {
                    decoder_biases[(t - TAG_DECODER_BIAS) as usize] = Some(values)
                }
                t => return Err(bad(&format!("unexpected aux tag {t}"))),
            }
        }
        if r.at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let (mean, scale) = match (mean, scale) {
            (Some(m), Some(s)) if m.len() == widths[0] && s.len() == widths[0] => (m, s),
            _ => return Err(bad("missing or mis-sized input standardization")),
        };

        let net = match kind {
            KIND_CLASSIFIER => {
                let head = layers.pop().expect("count >= 1");
                if head.activation != Activation::Softmax || layers.iter().any(|l| l.activation != Activation::Sigmoid) {
                    return Err(bad("classifier activations must be sigmoid layers and a softmax head"));
                }
                let daes = layers
                    .into_iter()
                    .zip(decoder_biases)
                    .map(|(encoder, db)| match db {
                        Some(db) if db.len() == encoder.inputs() => {
                            Ok(DenoisingAutoencoder { encoder, decoder_bias: Array1::from(db), corruption })
                        }
                        _ => Err(bad("missing or mis-sized decoder bias")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Network::Classifier(Sdae { layers: daes, head })
            }
            KIND_REGRESSOR => {
                if count != 2 || layers[0].activation != Activation::Sigmoid || layers[1].activation != Activation::Identity || widths[2] != 1 {
                    return Err(bad("regressor must be sigmoid hidden + single identity output"));
                }
                let (target_mean, target_scale) = target.ok_or_else(|| bad("missing target statistics"))?;
                let output = layers.pop().expect("two layers");
                let hidden = layers.pop().expect("two layers");
                Network::Regressor(Pnn3 { hidden, output, target_mean, target_scale })
            }
            k => return Err(bad(&format!("unknown model kind {k}"))),
        };
        Ok(TrainedModel { scaler: Standardizer { mean, scale }, net })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NeuralError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| bad(&e.to_string()))?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> io::Result<Result<Self, NeuralError>> {
        Ok(Self::from_bytes(&fs::read(path)?))
    }
}

fn bad(msg: &str) -> NeuralError {
    NeuralError::Checkpoint(msg.to_string())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NeuralError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NeuralError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classifier() -> TrainedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Sdae::new(5, &[4, 3], 8, 0.25, &mut rng);
        net.layers[1].decoder_bias[2] = 0.125;
        TrainedModel { scaler: Standardizer { mean: vec![0.5; 5], scale: vec![2.0; 5] }, net: Network::Classifier(net) }
    }

    #[test]
    fn round_trips_both_kinds() {
        let c = classifier();
        let bytes = c.to_bytes();
        let back = TrainedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pnn = Pnn3::new(3, 4, &mut rng);
        pnn.target_mean = 7.0;
        pnn.target_scale = 0.3;
        let r = TrainedModel { scaler: Standardizer::identity(3), net: Network::Regressor(pnn) };
        assert_eq!(TrainedModel::from_bytes(&r.to_bytes()).unwrap(), r);
    }

    #[test]
    fn rejects_damage() {
        let bytes = classifier().to_bytes();
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(TrainedModel::from_bytes(&wrong).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(TrainedModel::from_bytes(&longer).is_err());
    }
}
