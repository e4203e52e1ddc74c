//! Convolutional classifiers for the detection and DoA tasks, with exact input
//! gradients for the attacks.

mod io;
mod layers;
mod train;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::signal::{complex_to_tensor, ReceivedArray};
use crate::stats::{doa_windows, empirical_covariance, frobenius_normalize};
use crate::tensor::RealTensor;

pub use io::{read_history, read_model, write_history, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{softmax, softmax_cross_entropy, Batch, Cache, Layer, Mode};
pub use train::{adversarial_train, train, AdamState, EpochRecord, History, TrainConfig, TrainedModel};

/// Which of the two published architectures a network follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Detection,
    Doa,
    /// Anything assembled by hand, e.g. the small networks used in tests.
    Custom,
}

impl Arch {
    pub fn tag(self) -> u8 {
        match self {
            Arch::Detection => 0,
            Arch::Doa => 1,
            Arch::Custom => 255,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Arch::Detection),
            1 => Ok(Arch::Doa),
            255 => Ok(Arch::Custom),
            other => Err(Error::Format(format!("unknown architecture tag {other}"))),
        }
    }
}

/// Trainable parameter count of [`Network::detection`] at 8×500×2 input.
pub const DETECTION_PARAM_COUNT: usize = 1_027_106;
/// Trainable parameter count of [`Network::doa`] at 8×16×2 input.
pub const DOA_PARAM_COUNT: usize = 164_189;

/// A feed-forward stack of layers ending in logits; probabilities come from a
/// softmax over the last layer's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Arch,
    input_dims: [usize; 3],
    classes: usize,
    layers: Vec<Layer>,
}

/// Result of one forward pass over a batch with everything needed for the
/// backward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Batch,
    caches: Vec<Cache>,
}

/// Gradients of every trainable tensor, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn l2_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Loss, parameter gradients and input gradient for a single example.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    pub params: Gradients,
    pub input: RealTensor,
}

impl Network {
    /// Builds a network from explicit layers, checking that shapes chain from
    /// `input_dims` to a `[1, 1, classes]` logit vector.
    pub fn new(arch: Arch, input_dims: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        if input_dims.contains(&0) {
            return Err(Error::Domain(format!(
                "input dims must be positive, got {input_dims:?}"
            )));
        }
        let mut d = input_dims;
        for layer in &layers {
            d = layer.output_dims(d)?;
        }
        if d[0] != 1 || d[1] != 1 || d[2] < 2 {
            return Err(Error::Shape {
                expected: vec![1, 1, d[2].max(2)],
                got: d.to_vec(),
            });
        }
        Ok(Self {
            arch,
            input_dims,
            classes: d[2],
            layers,
        })
    }

    /// Detection CNN over raw array snapshots. At 8×500×2 the shapes run
    /// 6×498×32 → 3×249×32 → 1×247×64 → 1×123×64 → 7872 → 128 → 2.
    pub fn detection(input_dims: [usize; 3]) -> Result<Self> {
        let conv_out = |d: [usize; 3], k: usize| -> Result<[usize; 3]> {
            if d[0] < k || d[1] < k {
                return Err(Error::Shape {
                    expected: vec![k, k, d[2]],
                    got: d.to_vec(),
                });
            }
            Ok([d[0] - k + 1, d[1] - k + 1, 0])
        };
        let c1 = conv_out(input_dims, 3)?;
        let p1 = [c1[0] / 2, c1[1] / 2];
        let c2 = conv_out([p1[0], p1[1], 32], 3)?;
        let flat = c2[0] * (c2[1] / 2) * 64;
        Self::new(
            Arch::Detection,
            input_dims,
            vec![
                Layer::conv(3, 3, input_dims[2], 32),
                Layer::Relu,
                Layer::MaxPool { ph: 2, pw: 2 },
                Layer::conv(3, 3, 32, 64),
                Layer::Relu,
                Layer::MaxPool { ph: 1, pw: 2 },
                Layer::Flatten,
                Layer::dense(flat, 128),
                Layer::Relu,
                Layer::Dropout { rate: 0.5 },
                Layer::dense(128, 2),
            ],
        )
    }

    /// DoA CNN over the stacked covariance tensor. At 8×16×2 the shapes run
    /// 7×15×32 → 7×7×32 → 6×6×64 → 6×3×64 → 1152 → 128 → `classes`.
    /// Batch-norm is channel-wise and follows each convolution's ReLU.
    pub fn doa(input_dims: [usize; 3], classes: usize) -> Result<Self> {
        if input_dims[0] < 3 || input_dims[1] < 6 {
            return Err(Error::Shape {
                expected: vec![3, 6, input_dims[2]],
                got: input_dims.to_vec(),
            });
        }
        let c1 = [input_dims[0] - 1, input_dims[1] - 1];
        let p1 = [c1[0], c1[1] / 2];
        let c2 = [p1[0] - 1, p1[1].saturating_sub(1)];
        let flat = c2[0] * (c2[1] / 2) * 64;
        Self::new(
            Arch::Doa,
            input_dims,
            vec![
                Layer::conv(2, 2, input_dims[2], 32),
                Layer::Relu,
                Layer::batch_norm(32),
                Layer::MaxPool { ph: 1, pw: 2 },
                Layer::conv(2, 2, 32, 64),
                Layer::Relu,
                Layer::batch_norm(64),
                Layer::MaxPool { ph: 1, pw: 2 },
                Layer::Flatten,
                Layer::dense(flat, 128),
                Layer::Relu,
                Layer::Dropout { rate: 0.3 },
                Layer::dense(128, classes),
            ],
        )
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Re-draws every weight from a seeded generator.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            layer.init(&mut rng);
        }
    }

    /// Round every stored value through `f32`, the precision of model files.
    pub fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            let extra: Vec<&mut Vec<f64>> = match layer {
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => vec![gamma, beta, running_mean, running_var],
                other => other.params_mut(),
            };
            for v in extra.into_iter().flat_map(|p| p.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_input(&self, dims: [usize; 3]) -> Result<()> {
        if dims != self.input_dims {
            return Err(Error::Shape {
                expected: self.input_dims.to_vec(),
                got: dims.to_vec(),
            });
        }
        Ok(())
    }

    /// Stacks examples into a batch after checking their dims.
    pub fn batch<'a>(&self, xs: impl IntoIterator<Item = &'a RealTensor>) -> Result<Batch> {
        let mut data = Vec::new();
        let mut n = 0;
        for x in xs {
            self.check_input(x.dims())?;
            data.extend_from_slice(x.data());
            n += 1;
        }
        Ok(Batch {
            n,
            dims: self.input_dims,
            data,
        })
    }

    pub fn forward_batch(&self, x: &Batch, mode: Mode, mut rng: Option<&mut dyn RngCore>) -> Result<ForwardPass> {
        self.check_input(x.dims)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers {
            let layer_rng: Option<&mut dyn RngCore> = match rng {
                Some(ref mut r) => Some(&mut **r),
                None => None,
            };
            let (out, cache) = layer.forward(&act, mode, layer_rng)?;
            caches.push(cache);
            act = out;
        }
        Ok(ForwardPass { logits: act, caches })
    }

    /// Mean cross-entropy over the batch with gradients of the parameters and
    /// of every input example.
    pub fn batch_loss_and_gradients(
        &self,
        x: &Batch,
        labels: &[usize],
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Gradients, Batch, ForwardPass)> {
        if labels.len() != x.n {
            return Err(Error::Shape {
                expected: vec![x.n],
                got: vec![labels.len()],
            });
        }
        let pass = self.forward_batch(x, mode, rng)?;
        let (loss, dlogits) = softmax_cross_entropy(&pass.logits.data, labels, self.classes)?;
        let mut grad = Batch {
            n: x.n,
            dims: pass.logits.dims,
            data: dlogits,
        };
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(&pass.caches).rev() {
            let (dx, dparams) = layer.backward(cache, &grad)?;
            per_layer.push(dparams);
            grad = dx;
        }
        per_layer.reverse();
        let grads = Gradients(per_layer.into_iter().flatten().collect());
        Ok((loss, grads, grad, pass))
    }

    /// Class probabilities for one example.
    pub fn forward(&self, x: &RealTensor, mode: Mode) -> Result<Vec<f64>> {
        let pass = self.forward_batch(&self.batch([x])?, mode, None)?;
        Ok(softmax(&pass.logits.data, self.classes))
    }

    /// Eval-mode class probabilities for a list of examples.
    pub fn predict_proba(&self, xs: &[RealTensor]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let pass = self.forward_batch(&self.batch(xs)?, Mode::Eval, None)?;
        Ok(softmax(&pass.logits.data, self.classes)
            .chunks_exact(self.classes)
            .map(|p| p.to_vec())
            .collect())
    }

    /// Eval-mode argmax class, lowest index on ties.
    pub fn predict(&self, x: &RealTensor) -> Result<usize> {
        Ok(argmax(&self.forward(x, Mode::Eval)?))
    }

    pub fn predict_many(&self, xs: &[RealTensor]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(xs)?.iter().map(|p| argmax(p)).collect())
    }

    /// Cross-entropy for one example with exact gradients. Dropout is off in
    /// both modes; `mode` selects batch or running batch-norm statistics.
    pub fn loss_and_gradients(&self, x: &RealTensor, label: usize, mode: Mode) -> Result<LossGradients> {
        let batch = self.batch([x])?;
        let (loss, params, dx, _) = self.batch_loss_and_gradients(&batch, &[label], mode, None)?;
        Ok(LossGradients {
            loss,
            params,
            input: RealTensor::new(self.input_dims, dx.data)?,
        })
    }

    /// Eval-mode loss for one example.
    pub fn loss(&self, x: &RealTensor, label: usize) -> Result<f64> {
        let pass = self.forward_batch(&self.batch([x])?, Mode::Eval, None)?;
        Ok(softmax_cross_entropy(&pass.logits.data, &[label], self.classes)?.0)
    }

    /// Fold the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
            layer.update_running_stats(cache);
        }
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// DoA classifier input: the covariances of the k snapshots before and after
/// the onset, each scaled to unit Frobenius norm, side by side as an M×2M
/// complex matrix split into real and imaginary channels.
pub fn covariance_input(z: &ReceivedArray, k: usize, zeta: f64) -> Result<RealTensor> {
    let t0 = z
        .onset
        .ok_or_else(|| Error::Precondition("covariance input needs an onset index".into()))?;
    covariance_input_at(&z.samples, k, t0, zeta)
}

pub fn covariance_input_at(samples: &CMatrix, k: usize, t0: usize, zeta: f64) -> Result<RealTensor> {
    let (old, new) = doa_windows(samples, k, t0)?;
    let r_old = frobenius_normalize(&empirical_covariance(&old, zeta))?;
    let r_new = frobenius_normalize(&empirical_covariance(&new, zeta))?;
    let m = samples.nrows();
    let joined = CMatrix::from_fn(m, 2 * m, |i, j| {
        if j < m {
            r_old.values[(i, j)]
        } else {
            r_new.values[(i, j - m)]
        }
    });
    Ok(complex_to_tensor(&joined))
}
