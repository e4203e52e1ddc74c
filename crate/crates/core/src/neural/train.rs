use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax_cross_entropy, Batch, Gradients, Mode, Network};
use crate::attacks::{attack, AttackConfig};
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// Optimiser and schedule settings. `early_stopping_patience` and
/// `lr_patience` are counted in epochs without improvement of the monitored
/// loss (validation loss when a validation split exists).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub early_stopping_patience: Option<usize>,
    pub lr_factor: f64,
    pub lr_patience: Option<usize>,
    /// Return the parameters of the best monitored epoch instead of the last.
    pub restore_best: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Share of each minibatch replaced by attacked copies during
    /// adversarial training.
    pub adversarial_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 15,
            validation_fraction: 0.2,
            early_stopping_patience: None,
            lr_factor: 0.5,
            lr_patience: None,
            restore_best: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-7,
            adversarial_fraction: 0.5,
            rng_seed: 7,
        }
    }
}

impl TrainConfig {
    /// Fixed number of epochs, no schedule.
    pub fn detection() -> Self {
        Self::default()
    }

    /// Early stopping, plateau learning-rate reduction and best checkpoint.
    pub fn doa() -> Self {
        Self {
            epochs: 60,
            early_stopping_patience: Some(6),
            lr_patience: Some(3),
            restore_best: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Domain("batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Domain(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Domain(format!(
                "lr factor must lie in (0, 1], got {}",
                self.lr_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.adversarial_fraction) {
            return Err(Error::Domain(format!(
                "adversarial fraction must lie in [0, 1], got {}",
                self.adversarial_fraction
            )));
        }
        Ok(())
    }
}

/// Adam moment estimates, one buffer per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn apply(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let lr_t = lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        for (((p, g), m), v) in net
            .params_mut()
            .into_iter()
            .zip(&grads.0)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub history: History,
}

/// Train `net` from a fresh seeded initialisation on `(xs, labels)`.
pub fn train(net: Network, xs: &[RealTensor], labels: &[usize], cfg: &TrainConfig) -> Result<TrainedModel> {
    fit(net, xs, labels, cfg, None)
}

/// As [`train`], but within each minibatch the leading
/// `cfg.adversarial_fraction` of examples are replaced by perturbed copies
/// crafted against the current parameters.
pub fn adversarial_train(
    net: Network,
    xs: &[RealTensor],
    labels: &[usize],
    cfg: &TrainConfig,
    attack_cfg: &AttackConfig,
) -> Result<TrainedModel> {
    attack_cfg.validate()?;
    fit(net, xs, labels, cfg, Some(attack_cfg))
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn fit(
    mut net: Network,
    xs: &[RealTensor],
    labels: &[usize],
    cfg: &TrainConfig,
    adversary: Option<&AttackConfig>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if xs.len() != labels.len() {
        return Err(Error::Shape {
            expected: vec![xs.len()],
            got: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.classes()) {
        return Err(Error::Range(format!("label {bad} outside {} classes", net.classes())));
    }
    for x in xs {
        if x.dims() != net.input_dims() {
            return Err(Error::Shape {
                expected: net.input_dims().to_vec(),
                got: x.dims().to_vec(),
            });
        }
    }

    net.initialize(cfg.rng_seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng(cfg.rng_seed, 1));
    let n_val = (xs.len() as f64 * cfg.validation_fraction).floor() as usize;
    let (train_idx, val_idx) = order.split_at(xs.len() - n_val);
    if train_idx.is_empty() {
        return Err(Error::Domain("validation split leaves no training examples".into()));
    }
    let mut train_idx = train_idx.to_vec();

    let mut shuffle_rng = rng(cfg.rng_seed, 2);
    let mut dropout_rng = rng(cfg.rng_seed, 3);
    let mut adam = AdamState::new(&net, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut lr = cfg.learning_rate;
    let mut history = History::default();
    let mut best = (f64::INFINITY, 0usize);
    let mut checkpoint: Option<Network> = None;
    let (mut stale, mut plateau) = (0usize, 0usize);

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut batch = net.batch(chunk.iter().map(|&i| &xs[i]))?;
            if let Some(attack_cfg) = adversary {
                let n_adv = (chunk.len() as f64 * cfg.adversarial_fraction).round() as usize;
                let len = batch.example_len();
                for (j, &i) in chunk.iter().take(n_adv).enumerate() {
                    let p = attack(&net, &xs[i], labels[i], attack_cfg)?;
                    for (dst, d) in batch.data[j * len..(j + 1) * len].iter_mut().zip(p.delta.data()) {
                        *dst += d;
                    }
                }
            }
            let (loss, grads, _, pass) =
                net.batch_loss_and_gradients(&batch, &ys, Mode::Train, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            for (row, &y) in pass.logits.data.chunks_exact(net.classes()).zip(&ys) {
                if argmax(row) == y {
                    correct += 1;
                }
            }
            net.update_running_stats(&pass);
            adam.apply(&mut net, &grads, lr);
            loss_sum += loss * chunk.len() as f64;
        }
        let loss = loss_sum / train_idx.len() as f64;
        let accuracy = correct as f64 / train_idx.len() as f64;
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&net, val_idx.iter().map(|&i| (&xs[i], labels[i])), cfg.batch_size)?;
            (Some(l), Some(a))
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            accuracy,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        });

        let monitored = val_loss.unwrap_or(loss);
        if !monitored.is_finite() {
            return Err(Error::Diverged { epoch, loss: monitored });
        }
        if monitored < best.0 {
            best = (monitored, epoch);
            stale = 0;
            plateau = 0;
            if cfg.restore_best {
                checkpoint = Some(net.clone());
            }
        } else {
            stale += 1;
            plateau += 1;
            if cfg.lr_patience.is_some_and(|p| plateau >= p) {
                lr *= cfg.lr_factor;
                plateau = 0;
            }
            if cfg.early_stopping_patience.is_some_and(|p| stale >= p) {
                history.stopped_early = true;
                break;
            }
        }
    }

    history.best_epoch = history.epochs.len() - 1;
    if let Some(best_net) = checkpoint {
        net = best_net;
        history.best_epoch = best.1;
    }
    Ok(TrainedModel { network: net, history })
}

/// Eval-mode mean loss and accuracy.
pub(crate) fn evaluate<'a>(
    net: &Network,
    examples: impl Iterator<Item = (&'a RealTensor, usize)>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let examples: Vec<_> = examples.collect();
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch: Batch = net.batch(chunk.iter().map(|(x, _)| *x))?;
        let ys: Vec<usize> = chunk.iter().map(|(_, y)| *y).collect();
        let pass = net.forward_batch(&batch, Mode::Eval, None)?;
        let (loss, _) = softmax_cross_entropy(&pass.logits.data, &ys, net.classes())?;
        loss_sum += loss * chunk.len() as f64;
        correct += pass
            .logits
            .data
            .chunks_exact(net.classes())
            .zip(&ys)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    let n = examples.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}
