//! Layer kernels over NHWC batches. Convolutions are lowered to a single GEMM
//! through an im2col buffer; everything else is a direct loop.

use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A batch of `n` examples, each `dims` = (rows, cols, channels), stored
/// contiguously in NHWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(n: usize, dims: [usize; 3]) -> Self {
        Self {
            n,
            dims,
            data: vec![0.0; n * dims.iter().product::<usize>()],
        }
    }

    pub fn example_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn example(&self, i: usize) -> &[f64] {
        let len = self.example_len();
        &self.data[i * len..(i + 1) * len]
    }

    fn as_matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.n, self.example_len()), &self.data).expect("batch layout")
    }
}

/// Whether batch-norm uses batch statistics (training) or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv2d {
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        /// Kernel laid out as (kh, kw, cin) rows by `cout` columns.
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    MaxPool {
        ph: usize,
        pw: usize,
    },
    BatchNorm {
        channels: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        momentum: f64,
        eps: f64,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        /// `inputs` rows by `outputs` columns.
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Dropout {
        rate: f64,
    },
}

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Conv {
        cols: Vec<f64>,
        in_dims: [usize; 3],
    },
    Relu {
        out: Vec<f64>,
    },
    Pool {
        argmax: Vec<usize>,
        in_dims: [usize; 3],
    },
    BatchNorm {
        xhat: Vec<f64>,
        scale: Vec<f64>,
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    },
    Reshape {
        in_dims: [usize; 3],
    },
    Dense {
        input: Vec<f64>,
        in_dims: [usize; 3],
    },
    Dropout {
        mask: Option<Vec<f64>>,
    },
}

impl Layer {
    pub fn conv(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        Layer::Conv2d {
            kh,
            kw,
            cin,
            cout,
            weight: vec![0.0; kh * kw * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Layer::Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        Layer::BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.99,
            eps: 1e-3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Dropout { .. } => "dropout",
        }
    }

    /// Output dims for a given input, or a shape error if the layer cannot
    /// accept it.
    pub fn output_dims(&self, d: [usize; 3]) -> Result<[usize; 3]> {
        let bad = |expected: Vec<usize>| Error::Shape {
            expected,
            got: d.to_vec(),
        };
        match self {
            Layer::Conv2d { kh, kw, cin, cout, .. } => {
                if d[2] != *cin || d[0] < *kh || d[1] < *kw {
                    return Err(bad(vec![*kh, *kw, *cin]));
                }
                Ok([d[0] - kh + 1, d[1] - kw + 1, *cout])
            }
            Layer::MaxPool { ph, pw } => {
                if d[0] < *ph || d[1] < *pw {
                    return Err(bad(vec![*ph, *pw, d[2]]));
                }
                Ok([d[0] / ph, d[1] / pw, d[2]])
            }
            Layer::BatchNorm { channels, .. } => {
                if d[2] != *channels {
                    return Err(bad(vec![d[0], d[1], *channels]));
                }
                Ok(d)
            }
            Layer::Flatten => Ok([1, 1, d.iter().product()]),
            Layer::Dense { inputs, outputs, .. } => {
                if d.iter().product::<usize>() != *inputs {
                    return Err(bad(vec![1, 1, *inputs]));
                }
                Ok([1, 1, *outputs])
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(d),
        }
    }

    /// Trainable tensors in a fixed order (weights before biases, scale before
    /// shift).
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                vec![weight, bias]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias, .. } => {
                vec![weight, bias]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    /// He-uniform initialisation of weights, zero biases.
    pub fn init(&mut self, rng: &mut dyn RngCore) {
        let (fan_in, weight, bias) = match self {
            Layer::Conv2d {
                kh,
                kw,
                cin,
                weight,
                bias,
                ..
            } => (*kh * *kw * *cin, weight, bias),
            Layer::Dense {
                inputs, weight, bias, ..
            } => (*inputs, weight, bias),
            _ => return,
        };
        let limit = (6.0 / fan_in as f64).sqrt();
        for w in weight.iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        bias.fill(0.0);
    }

    pub fn forward(&self, x: &Batch, mode: Mode, rng: Option<&mut dyn RngCore>) -> Result<(Batch, Cache)> {
        let out_dims = self.output_dims(x.dims)?;
        let n = x.n;
        match self {
            Layer::Conv2d {
                kh,
                kw,
                cin,
                cout,
                weight,
                bias,
            } => {
                let [_, w, _] = x.dims;
                let [ho, wo, _] = out_dims;
                let k = kh * kw * cin;
                let rows = n * ho * wo;
                let mut cols = vec![0.0; rows * k];
                let mut r = 0;
                for b in 0..n {
                    let xb = x.example(b);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let dst = &mut cols[r * k..(r + 1) * k];
                            let mut c = 0;
                            for ky in 0..*kh {
                                let src = ((oy + ky) * w + ox) * cin;
                                let len = kw * cin;
                                dst[c..c + len].copy_from_slice(&xb[src..src + len]);
                                c += len;
                            }
                            r += 1;
                        }
                    }
                }
                let mut out = Batch::zeros(n, out_dims);
                for row in out.data.chunks_exact_mut(*cout) {
                    row.copy_from_slice(bias);
                }
                general_mat_mul(
                    1.0,
                    &ArrayView2::from_shape((rows, k), &cols).expect("im2col"),
                    &ArrayView2::from_shape((k, *cout), weight).expect("kernel"),
                    1.0,
                    &mut ArrayViewMut2::from_shape((rows, *cout), &mut out.data).expect("conv out"),
                );
                Ok((out, Cache::Conv { cols, in_dims: x.dims }))
            }
            Layer::Relu => {
                let mut out = x.clone();
                for v in &mut out.data {
                    *v = v.max(0.0);
                }
                let cache = Cache::Relu { out: out.data.clone() };
                Ok((out, cache))
            }
            Layer::MaxPool { ph, pw } => {
                let [_, w, c] = x.dims;
                let [ho, wo, _] = out_dims;
                let in_len = x.example_len();
                let mut out = Batch::zeros(n, out_dims);
                let mut argmax = vec![0; out.data.len()];
                let mut o = 0;
                for b in 0..n {
                    let base = b * in_len;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for ch in 0..c {
                                let mut best = usize::MAX;
                                let mut best_v = f64::NEG_INFINITY;
                                for dy in 0..*ph {
                                    for dx in 0..*pw {
                                        let idx = base + ((oy * ph + dy) * w + ox * pw + dx) * c + ch;
                                        // Strict comparison keeps the first maximum on ties.
                                        if best == usize::MAX || x.data[idx] > best_v {
                                            best = idx;
                                            best_v = x.data[idx];
                                        }
                                    }
                                }
                                out.data[o] = best_v;
                                argmax[o] = best;
                                o += 1;
                            }
                        }
                    }
                }
                Ok((
                    out,
                    Cache::Pool {
                        argmax,
                        in_dims: x.dims,
                    },
                ))
            }
            Layer::BatchNorm {
                channels,
                gamma,
                beta,
                running_mean,
                running_var,
                eps,
                ..
            } => {
                let c = *channels;
                let count = x.data.len() / c;
                let (mean, var, batch_stats) = match mode {
                    Mode::Train => {
                        let mut mean = vec![0.0; c];
                        for (i, v) in x.data.iter().enumerate() {
                            mean[i % c] += v;
                        }
                        mean.iter_mut().for_each(|m| *m /= count as f64);
                        let mut var = vec![0.0; c];
                        for (i, v) in x.data.iter().enumerate() {
                            let d = v - mean[i % c];
                            var[i % c] += d * d;
                        }
                        var.iter_mut().for_each(|s| *s /= count as f64);
                        (mean.clone(), var.clone(), Some((mean, var)))
                    }
                    Mode::Eval => (running_mean.clone(), running_var.clone(), None),
                };
                let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = x.data.clone();
                let mut out = Batch::zeros(n, out_dims);
                for (i, (xh, o)) in xhat.iter_mut().zip(out.data.iter_mut()).enumerate() {
                    let ch = i % c;
                    *xh = (*xh - mean[ch]) * scale[ch];
                    *o = gamma[ch] * *xh + beta[ch];
                }
                Ok((
                    out,
                    Cache::BatchNorm {
                        xhat,
                        scale,
                        batch_stats,
                    },
                ))
            }
            Layer::Flatten => Ok((
                Batch {
                    n,
                    dims: out_dims,
                    data: x.data.clone(),
                },
                Cache::Reshape { in_dims: x.dims },
            )),
            Layer::Dense {
                inputs,
                outputs,
                weight,
                bias,
            } => {
                let mut out = Batch::zeros(n, out_dims);
                for row in out.data.chunks_exact_mut(*outputs) {
                    row.copy_from_slice(bias);
                }
                general_mat_mul(
                    1.0,
                    &x.as_matrix(),
                    &ArrayView2::from_shape((*inputs, *outputs), weight).expect("dense weight"),
                    1.0,
                    &mut ArrayViewMut2::from_shape((n, *outputs), &mut out.data).expect("dense out"),
                );
                Ok((
                    out,
                    Cache::Dense {
                        input: x.data.clone(),
                        in_dims: x.dims,
                    },
                ))
            }
            Layer::Dropout { rate } => match (mode, rng) {
                (Mode::Train, Some(rng)) if *rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let mask: Vec<f64> = (0..x.data.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let mut out = x.clone();
                    out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    Ok((out, Cache::Dropout { mask: Some(mask) }))
                }
                _ => Ok((x.clone(), Cache::Dropout { mask: None })),
            },
        }
    }

    /// Returns the input gradient and the gradients of [`Layer::params`], in
    /// the same order.
    pub fn backward(&self, cache: &Cache, dy: &Batch) -> Result<(Batch, Vec<Vec<f64>>)> {
        let n = dy.n;
        match (self, cache) {
            (
                Layer::Conv2d {
                    kh,
                    kw,
                    cin,
                    cout,
                    weight,
                    ..
                },
                Cache::Conv { cols, in_dims },
            ) => {
                let k = kh * kw * cin;
                let rows = dy.data.len() / cout;
                let cols_m = ArrayView2::from_shape((rows, k), cols).expect("im2col");
                let dy_m = ArrayView2::from_shape((rows, *cout), &dy.data).expect("conv grad");
                let mut dw = vec![0.0; k * cout];
                general_mat_mul(
                    1.0,
                    &cols_m.t(),
                    &dy_m,
                    0.0,
                    &mut ArrayViewMut2::from_shape((k, *cout), &mut dw).expect("kernel grad"),
                );
                let mut db = vec![0.0; *cout];
                for row in dy.data.chunks_exact(*cout) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let mut dcols = vec![0.0; rows * k];
                general_mat_mul(
                    1.0,
                    &dy_m,
                    &ArrayView2::from_shape((k, *cout), weight).expect("kernel").t(),
                    0.0,
                    &mut ArrayViewMut2::from_shape((rows, k), &mut dcols).expect("col grad"),
                );
                let [_, w, _] = *in_dims;
                let [ho, wo, _] = self.output_dims(*in_dims)?;
                let mut dx = Batch::zeros(n, *in_dims);
                let in_len = dx.example_len();
                let mut r = 0;
                for b in 0..n {
                    let dxb = &mut dx.data[b * in_len..(b + 1) * in_len];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let src = &dcols[r * k..(r + 1) * k];
                            let mut c = 0;
                            for ky in 0..*kh {
                                let dst = ((oy + ky) * w + ox) * cin;
                                let len = kw * cin;
                                dxb[dst..dst + len]
                                    .iter_mut()
                                    .zip(&src[c..c + len])
                                    .for_each(|(a, b)| *a += b);
                                c += len;
                            }
                            r += 1;
                        }
                    }
                }
                Ok((dx, vec![dw, db]))
            }
            (Layer::Relu, Cache::Relu { out }) => {
                let mut dx = dy.clone();
                dx.data.iter_mut().zip(out).for_each(|(g, y)| {
                    if *y <= 0.0 {
                        *g = 0.0
                    }
                });
                Ok((dx, vec![]))
            }
            (Layer::MaxPool { .. }, Cache::Pool { argmax, in_dims }) => {
                let mut dx = Batch::zeros(n, *in_dims);
                for (g, &idx) in dy.data.iter().zip(argmax) {
                    dx.data[idx] += g;
                }
                Ok((dx, vec![]))
            }
            (
                Layer::BatchNorm { channels, gamma, .. },
                Cache::BatchNorm {
                    xhat,
                    scale,
                    batch_stats,
                },
            ) => {
                let c = *channels;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (g, xh)) in dy.data.iter().zip(xhat).enumerate() {
                    dgamma[i % c] += g * xh;
                    dbeta[i % c] += g;
                }
                let mut dx = dy.clone();
                if batch_stats.is_some() {
                    let count = dy.data.len() as f64 / c as f64;
                    for (i, (g, xh)) in dx.data.iter_mut().zip(xhat).enumerate() {
                        let ch = i % c;
                        *g = gamma[ch] * scale[ch] * (*g - dbeta[ch] / count - xh * dgamma[ch] / count);
                    }
                } else {
                    for (i, g) in dx.data.iter_mut().enumerate() {
                        let ch = i % c;
                        *g *= gamma[ch] * scale[ch];
                    }
                }
                Ok((dx, vec![dgamma, dbeta]))
            }
            (Layer::Flatten, Cache::Reshape { in_dims }) => Ok((
                Batch {
                    n,
                    dims: *in_dims,
                    data: dy.data.clone(),
                },
                vec![],
            )),
            (
                Layer::Dense {
                    inputs,
                    outputs,
                    weight,
                    ..
                },
                Cache::Dense { input, in_dims },
            ) => {
                let x_m = ArrayView2::from_shape((n, *inputs), input).expect("dense input");
                let dy_m = ArrayView2::from_shape((n, *outputs), &dy.data).expect("dense grad");
                let mut dw = vec![0.0; inputs * outputs];
                general_mat_mul(
                    1.0,
                    &x_m.t(),
                    &dy_m,
                    0.0,
                    &mut ArrayViewMut2::from_shape((*inputs, *outputs), &mut dw).expect("weight grad"),
                );
                let mut db = vec![0.0; *outputs];
                for row in dy.data.chunks_exact(*outputs) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let mut dx = vec![0.0; n * inputs];
                general_mat_mul(
                    1.0,
                    &dy_m,
                    &ArrayView2::from_shape((*inputs, *outputs), weight)
                        .expect("dense weight")
                        .t(),
                    0.0,
                    &mut ArrayViewMut2::from_shape((n, *inputs), &mut dx).expect("input grad"),
                );
                Ok((
                    Batch {
                        n,
                        dims: *in_dims,
                        data: dx,
                    },
                    vec![dw, db],
                ))
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                let mut dx = dy.clone();
                if let Some(mask) = mask {
                    dx.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                }
                Ok((dx, vec![]))
            }
            (layer, _) => Err(Error::State(format!(
                "cache does not belong to a {} layer",
                layer.name()
            ))),
        }
    }

    /// Fold one training step's batch statistics into the running averages.
    pub fn update_running_stats(&mut self, cache: &Cache) {
        if let (
            Layer::BatchNorm {
                running_mean,
                running_var,
                momentum,
                ..
            },
            Cache::BatchNorm {
                batch_stats: Some((mean, var)),
                ..
            },
        ) = (self, cache)
        {
            for (r, m) in running_mean.iter_mut().zip(mean) {
                *r = *momentum * *r + (1.0 - *momentum) * m;
            }
            for (r, v) in running_var.iter_mut().zip(var) {
                *r = *momentum * *r + (1.0 - *momentum) * v;
            }
        }
    }
}

/// Row-wise softmax of logits.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean categorical cross-entropy over the batch and its gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() * classes {
        return Err(Error::Shape {
            expected: vec![labels.len(), classes],
            got: vec![logits.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Range(format!("label {bad} outside {classes} classes")));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for ((row, g), &y) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        for (j, (gj, v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            *gj = (p - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}
