//! Non-symmetric dense autoencoder trained with simulated federated averaging.
//!
//! Parameters live in one flat `f64` buffer ([`ModelParams::values`]) laid out
//! layer by layer as `W (inputs × outputs, row-major)` followed by `b`. The
//! flat layout is what clients exchange and what the server averages.

mod federated;
mod train;

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::rng::{self, tag};
use crate::{Error, Result};

pub use federated::{
    fedavg_round, server_step, train_federated, weighted_average, ClientData, RoundLog,
    ServerState, TrainConfig, TrainedModel,
};
pub use train::{local_train, loss_and_gradient, ClientOptimizer};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu if z <= 0.0 => LEAKY_SLOPE * z,
            _ => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu if z <= 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Hidden widths of the encoder and decoder around the latent layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub latent: usize,
    pub decoder_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![256, 64],
            latent: 25,
            decoder_hidden: vec![128],
        }
    }
}

fn stack(input: usize, hidden: &[usize], output: usize) -> Vec<LayerShape> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerShape {
            inputs: w[0],
            outputs: w[1],
            activation: if i + 2 == dims.len() {
                Activation::Linear
            } else {
                Activation::LeakyRelu
            },
        })
        .collect()
}

/// Encoder and decoder layer shapes plus the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<LayerShape>,
    pub decoder: Vec<LayerShape>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub encoder: Vec<LayerShape>,
    pub decoder: Vec<LayerShape>,
    pub n_params: usize,
    pub config_hash: String,
}

impl ModelParams {
    /// All-zero parameters for the given layer stacks.
    pub fn from_shapes(encoder: Vec<LayerShape>, decoder: Vec<LayerShape>) -> Result<Self> {
        let check = |layers: &[LayerShape], what: &str| -> Result<()> {
            if layers.is_empty() {
                return Err(Error::invalid(format!("{what} has no layers")));
            }
            for w in layers.windows(2) {
                if w[0].outputs != w[1].inputs {
                    return Err(Error::invalid(format!("{what} layer widths do not chain")));
                }
            }
            if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
                return Err(Error::invalid(format!("{what} has a zero-width layer")));
            }
            Ok(())
        };
        check(&encoder, "encoder")?;
        check(&decoder, "decoder")?;
        let latent = encoder.last().expect("checked").outputs;
        let input = encoder[0].inputs;
        if decoder[0].inputs != latent || decoder.last().expect("checked").outputs != input {
            return Err(Error::invalid(
                "decoder must map latent back to input width",
            ));
        }
        let n: usize = encoder
            .iter()
            .chain(&decoder)
            .map(LayerShape::param_count)
            .sum();
        Ok(Self {
            encoder,
            decoder,
            values: vec![0.0; n],
        })
    }

    pub fn zeros(input_dim: usize, arch: &Architecture) -> Result<Self> {
        Self::from_shapes(
            stack(input_dim, &arch.encoder_hidden, arch.latent),
            stack(arch.latent, &arch.decoder_hidden, input_dim),
        )
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(input_dim: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(input_dim, arch)?;
        let mut rng = rng::stream(seed, tag::INIT, 0);
        let mut offset = 0;
        for layer in p.encoder.clone().iter().chain(p.decoder.clone().iter()) {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            let nw = layer.inputs * layer.outputs;
            for v in &mut p.values[offset..offset + nw] {
                *v = rng.random_range(-limit..=limit);
            }
            offset += layer.param_count();
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].inputs
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &LayerShape> {
        self.encoder.iter().chain(&self.decoder)
    }

    /// `(offset of W, offset of b)` for every layer, encoder first.
    pub(crate) fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for l in self.layers() {
            out.push((offset, offset + l.inputs * l.outputs));
            offset += l.param_count();
        }
        out
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let shape = self.layers().nth(layer).expect("layer index");
        let (w, _) = self.offsets()[layer];
        ArrayView2::from_shape(
            (shape.inputs, shape.outputs),
            &self.values[w..w + shape.inputs * shape.outputs],
        )
        .expect("weight block")
    }

    pub fn weights_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let shape = *self.layers().nth(layer).expect("layer index");
        let (w, _) = self.offsets()[layer];
        ArrayViewMut2::from_shape(
            (shape.inputs, shape.outputs),
            &mut self.values[w..w + shape.inputs * shape.outputs],
        )
        .expect("weight block")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let shape = self.layers().nth(layer).expect("layer index");
        let (_, b) = self.offsets()[layer];
        ArrayView1::from(&self.values[b..b + shape.outputs])
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let shape = *self.layers().nth(layer).expect("layer index");
        let (_, b) = self.offsets()[layer];
        &mut self.values[b..b + shape.outputs]
    }

    fn check_input(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    fn apply_layers(&self, range: std::ops::Range<usize>, input: Array2<f64>) -> Array2<f64> {
        let shapes: Vec<LayerShape> = self.layers().copied().collect();
        let mut a = input;
        for layer in range {
            let mut z = a.dot(&self.weights(layer));
            z += &self.bias(layer);
            let act = shapes[layer].activation;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        a
    }

    /// Latent codes and reconstructions for a batch.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(&batch)?;
        let latent = self.apply_layers(0..self.encoder.len(), batch.to_owned());
        let total = self.encoder.len() + self.decoder.len();
        let recon = self.apply_layers(self.encoder.len()..total, latent.clone());
        Ok((latent, recon))
    }

    /// Encoder pass only; identical to the latent half of [`forward`](Self::forward).
    pub fn encode_all(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&rows)?;
        Ok(self.apply_layers(0..self.encoder.len(), rows.to_owned()))
    }

    /// Per-row mean squared reconstruction residual, `‖x − x̂‖² / d`.
    pub fn reconstruction_error(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let (_, recon) = self.forward(rows)?;
        let d = rows.ncols() as f64;
        Ok(rows
            .axis_iter(Axis(0))
            .zip(recon.axis_iter(Axis(0)))
            .map(|(x, r)| {
                x.iter()
                    .zip(r.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / d
            })
            .collect())
    }

    pub fn manifest(&self, config_hash: &str) -> ModelManifest {
        ModelManifest {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            n_params: self.values.len(),
            config_hash: config_hash.to_string(),
        }
    }

    /// Writes `<stem>.bin` (little-endian f64 values) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
        io::write_bytes(
            &dir.join(format!("{stem}.bin")),
            &io::f64s_to_le_bytes(&self.values),
        )?;
        io::write_json(
            &dir.join(format!("{stem}.json")),
            &self.manifest(config_hash),
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(Self, ModelManifest)> {
        let manifest: ModelManifest = io::read_json(&dir.join(format!("{stem}.json")))?;
        let mut params = Self::from_shapes(manifest.encoder.clone(), manifest.decoder.clone())?;
        let values = io::le_bytes_to_f64s(&io::read_bytes(&dir.join(format!("{stem}.bin")))?)?;
        if values.len() != params.len() || values.len() != manifest.n_params {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: values.len(),
            });
        }
        params.values = values;
        Ok((params, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand_distr::{Distribution, Normal};

    fn single_pair(d: usize, p: usize) -> ModelParams {
        ModelParams::from_shapes(
            vec![LayerShape {
                inputs: d,
                outputs: p,
                activation: Activation::Linear,
            }],
            vec![LayerShape {
                inputs: p,
                outputs: d,
                activation: Activation::Linear,
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_pair_reconstructs_exactly() {
        let mut p = single_pair(3, 3);
        p.weights_mut(0).assign(&Array2::eye(3));
        p.weights_mut(1).assign(&Array2::eye(3));
        let x = array![[1.5, -2.0, 0.25], [0.0, 3.0, -1.0]];
        let (z, r) = p.forward(x.view()).unwrap();
        assert_eq!(z, x);
        assert_eq!(r, x);
        assert!(p
            .reconstruction_error(x.view())
            .unwrap()
            .iter()
            .all(|&e| e == 0.0));
    }

    #[test]
    fn zero_params_reconstruct_zero() {
        let p = ModelParams::zeros(
            4,
            &Architecture {
                encoder_hidden: vec![5],
                latent: 2,
                decoder_hidden: vec![3],
            },
        )
        .unwrap();
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        let (_, r) = p.forward(x.view()).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_error() {
        let p = single_pair(2, 1);
        // zero params -> reconstruction (0, 0)
        let e = p.reconstruction_error(array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(e, vec![0.5]);
    }

    #[test]
    fn default_architecture_shapes() {
        let p = ModelParams::glorot(49, &Architecture::default(), 1).unwrap();
        let widths: Vec<(usize, usize)> = p.layers().map(|l| (l.inputs, l.outputs)).collect();
        assert_eq!(
            widths,
            vec![(49, 256), (256, 64), (64, 25), (25, 128), (128, 49)]
        );
        assert_eq!(p.latent_dim(), 25);
        let acts: Vec<Activation> = p.layers().map(|l| l.activation).collect();
        assert_eq!(
            acts,
            vec![
                Activation::LeakyRelu,
                Activation::LeakyRelu,
                Activation::Linear,
                Activation::LeakyRelu,
                Activation::Linear
            ]
        );
        let x = Array2::<f64>::ones((3, 49));
        assert_eq!(p.encode_all(x.view()).unwrap().ncols(), 25);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = single_pair(3, 2);
        assert!(matches!(
            p.forward(Array2::zeros((2, 4)).view()),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 4
            })
        ));
    }

    #[test]
    fn glorot_respects_limits_and_is_seeded() {
        let arch = Architecture {
            encoder_hidden: vec![8],
            latent: 3,
            decoder_hidden: vec![],
        };
        let a = ModelParams::glorot(6, &arch, 5).unwrap();
        let b = ModelParams::glorot(6, &arch, 5).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(a.weights(0).iter().all(|w| w.abs() <= limit));
        assert!(a.bias(0).iter().all(|&b| b == 0.0));
    }

    /// Straight-line reference: explicit loops over every weight.
    fn reference_forward(p: &ModelParams, x: &Array2<f64>) -> Array2<f64> {
        let shapes: Vec<LayerShape> = p.layers().copied().collect();
        let mut out = Array2::zeros((x.nrows(), p.input_dim()));
        for r in 0..x.nrows() {
            let mut a: Vec<f64> = x.row(r).to_vec();
            for (l, s) in shapes.iter().enumerate() {
                let w = p.weights(l);
                let b = p.bias(l);
                let mut next = vec![0.0; s.outputs];
                for o in 0..s.outputs {
                    let mut acc = b[o];
                    for i in 0..s.inputs {
                        acc += a[i] * w[[i, o]];
                    }
                    next[o] = s.activation.apply(acc);
                }
                a = next;
            }
            out.row_mut(r).assign(&Array1::from(a));
        }
        out
    }

    #[test]
    fn forward_matches_loop_reference() {
        let arch = Architecture {
            encoder_hidden: vec![7, 5],
            latent: 3,
            decoder_hidden: vec![4],
        };
        let mut p = ModelParams::glorot(6, &arch, 99).unwrap();
        let normal = Normal::new(0.0, 0.3).unwrap();
        let mut rng = rng::stream(3, 0, 0);
        for v in p.values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
        let x = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 6 + j) as f64 * 0.37).sin());
        let (_, r) = p.forward(x.view()).unwrap();
        let want = reference_forward(&p, &x);
        for (a, b) in r.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::glorot(
            5,
            &Architecture {
                encoder_hidden: vec![4],
                latent: 2,
                decoder_hidden: vec![3],
            },
            2,
        )
        .unwrap();
        p.save(dir.path(), "model", "abc").unwrap();
        let bytes = io::read_bytes(&dir.path().join("model.bin")).unwrap();
        assert_eq!(bytes.len(), p.len() * 8);
        assert_eq!(&bytes[..8], &p.values[0].to_le_bytes());
        let (q, m) = ModelParams::load(dir.path(), "model").unwrap();
        assert_eq!(q, p);
        assert_eq!(m.config_hash, "abc");
    }
}
