use ndarray::{Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerShape, ModelParams};
use crate::{Error, Result};

/// Mean over the batch of `‖x − x̂‖² / d` and its gradient with respect to
/// every entry of [`ModelParams::values`].
pub fn loss_and_gradient(
    params: &ModelParams,
    batch: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<f64>)> {
    if batch.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: batch.ncols(),
        });
    }
    let shapes: Vec<LayerShape> = params.layers().copied().collect();
    let n_layers = shapes.len();

    // inputs[l] feeds layer l; pre[l] is its pre-activation
    let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    inputs.push(batch.to_owned());
    for (l, s) in shapes.iter().enumerate() {
        let mut z = inputs[l].dot(&params.weights(l));
        z += &params.bias(l);
        let act = s.activation;
        inputs.push(z.mapv(|v| act.apply(v)));
        pre.push(z);
    }

    let recon = &inputs[n_layers];
    let n = batch.nrows() as f64;
    let d = batch.ncols() as f64;
    let residual = recon - &batch;
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / (n * d);

    let mut grad = vec![0.0; params.len()];
    let offsets = params.offsets();
    let mut delta = residual * (2.0 / (n * d));
    for l in (0..n_layers).rev() {
        let s = shapes[l];
        let act = s.activation;
        ndarray::Zip::from(&mut delta)
            .and(&pre[l])
            .for_each(|g, &z| *g *= act.derivative(z));
        let (w_off, b_off) = offsets[l];
        let gw = inputs[l].t().dot(&delta);
        ArrayViewMut2::from_shape(
            (s.inputs, s.outputs),
            &mut grad[w_off..w_off + s.inputs * s.outputs],
        )
        .expect("weight gradient block")
        .assign(&gw);
        ArrayViewMut1::from(&mut grad[b_off..b_off + s.outputs]).assign(&delta.sum_axis(Axis(0)));
        if l > 0 {
            delta = delta.dot(&params.weights(l).t());
        }
    }
    Ok((loss, grad))
}

/// Per-client optimizer. A fresh optimizer state is created for every local
/// training call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientOptimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Default for ClientOptimizer {
    fn default() -> Self {
        ClientOptimizer::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ClientOptimizer {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            ClientOptimizer::Adam { lr, .. } | ClientOptimizer::Sgd { lr } => lr,
        }
    }
}

struct OptimizerState {
    kind: ClientOptimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: ClientOptimizer, n: usize) -> Self {
        let (m, v) = match kind {
            ClientOptimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
            ClientOptimizer::Sgd { .. } => (Vec::new(), Vec::new()),
        };
        Self { kind, m, v, t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            ClientOptimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            ClientOptimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Runs `epochs` passes over `rows` with reshuffled minibatches.
///
/// Returns the updated parameters and the loss of the last minibatch. A
/// non-finite loss aborts with [`Error::Divergence`].
pub fn local_train<R: Rng>(
    params: &ModelParams,
    rows: ArrayView2<'_, f64>,
    optimizer: ClientOptimizer,
    epochs: usize,
    batch_size: usize,
    client: usize,
    rng: &mut R,
) -> Result<(ModelParams, f64)> {
    if rows.nrows() == 0 {
        return Err(Error::invalid(format!("client {client} has no rows")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut out = params.clone();
    let mut state = OptimizerState::new(optimizer, out.len());
    let mut order: Vec<usize> = (0..rows.nrows()).collect();
    let mut last_loss = f64::NAN;
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = rows.select(Axis(0), chunk);
            let (loss, grad) = loss_and_gradient(&out, batch.view())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { client });
            }
            state.step(&mut out.values, &grad);
            last_loss = loss;
        }
    }
    if epochs > 0 && out.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { client });
    }
    Ok((out, last_loss))
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, Architecture};
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn linear_pair(d: usize, p: usize) -> ModelParams {
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
    fn zero_learning_rate_leaves_params_unchanged() {
        let p = ModelParams::glorot(
            5,
            &Architecture {
                encoder_hidden: vec![4],
                latent: 2,
                decoder_hidden: vec![4],
            },
            1,
        )
        .unwrap();
        let x = Array2::from_shape_fn((10, 5), |(i, j)| (i as f64 - j as f64) * 0.1);
        let opt = ClientOptimizer::Adam {
            lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let (q, loss) = local_train(&p, x.view(), opt, 2, 4, 0, &mut rng::stream(1, 0, 0)).unwrap();
        assert_eq!(q, p);
        assert!(loss.is_finite());
    }

    #[test]
    fn sgd_step_matches_hand_derivation() {
        // encoder x -> z = x We + be, decoder z -> x̂ = z Wd + bd, single sample
        let mut p = linear_pair(3, 2);
        p.weights_mut(0)
            .assign(&array![[0.5, -0.2], [0.1, 0.3], [-0.4, 0.2]]);
        p.bias_mut(0).copy_from_slice(&[0.05, -0.1]);
        p.weights_mut(1)
            .assign(&array![[0.2, 0.7, -0.3], [0.6, -0.5, 0.1]]);
        p.bias_mut(1).copy_from_slice(&[0.0, 0.1, -0.2]);
        let x = [1.0, -2.0, 0.5];
        let lr = 0.1;

        let we = p.weights(0).to_owned();
        let be = p.bias(0).to_owned();
        let wd = p.weights(1).to_owned();
        let bd = p.bias(1).to_owned();
        let z: Vec<f64> = (0..2)
            .map(|o| be[o] + (0..3).map(|i| x[i] * we[[i, o]]).sum::<f64>())
            .collect();
        let xh: Vec<f64> = (0..3)
            .map(|o| bd[o] + (0..2).map(|i| z[i] * wd[[i, o]]).sum::<f64>())
            .collect();
        // dL/dx̂ = 2/d (x̂ − x)
        let g: Vec<f64> = (0..3).map(|o| 2.0 / 3.0 * (xh[o] - x[o])).collect();
        let dz: Vec<f64> = (0..2)
            .map(|i| (0..3).map(|o| g[o] * wd[[i, o]]).sum())
            .collect();

        let batch = array![[1.0, -2.0, 0.5]];
        let (q, _) = local_train(
            &p,
            batch.view(),
            ClientOptimizer::Sgd { lr },
            1,
            1,
            0,
            &mut rng::stream(0, 0, 0),
        )
        .unwrap();
        for i in 0..3 {
            for o in 0..2 {
                assert!((q.weights(0)[[i, o]] - (we[[i, o]] - lr * x[i] * dz[o])).abs() < 1e-10);
            }
        }
        for o in 0..2 {
            assert!((q.bias(0)[o] - (be[o] - lr * dz[o])).abs() < 1e-10);
        }
        for i in 0..2 {
            for o in 0..3 {
                assert!((q.weights(1)[[i, o]] - (wd[[i, o]] - lr * z[i] * g[o])).abs() < 1e-10);
            }
        }
        for o in 0..3 {
            assert!((q.bias(1)[o] - (bd[o] - lr * g[o])).abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = linear_pair(2, 1);
        p.values.iter_mut().for_each(|v| *v = 1e200);
        let x = array![[1e200, 1e200]];
        assert!(matches!(
            local_train(
                &p,
                x.view(),
                ClientOptimizer::Sgd { lr: 1.0 },
                1,
                1,
                7,
                &mut rng::stream(0, 0, 0)
            ),
            Err(Error::Divergence { client: 7 })
        ));
    }

    #[test]
    fn adam_reduces_loss() {
        let p = ModelParams::glorot(
            6,
            &Architecture {
                encoder_hidden: vec![8],
                latent: 3,
                decoder_hidden: vec![8],
            },
            4,
        )
        .unwrap();
        let x = Array2::from_shape_fn((64, 6), |(i, j)| ((i * 3 + j) as f64 * 0.7).sin());
        let (before, _) = loss_and_gradient(&p, x.view()).unwrap();
        let opt = ClientOptimizer::Adam {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let (q, _) = local_train(&p, x.view(), opt, 30, 16, 0, &mut rng::stream(2, 0, 0)).unwrap();
        let (after, _) = loss_and_gradient(&q, x.view()).unwrap();
        assert!(after < before * 0.5, "{after} vs {before}");
    }
}
