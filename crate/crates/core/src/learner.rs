//! Multinomial logistic regression trained by plain SGD.
//!
//! One step descends the gradient of the *summed* cross-entropy over the
//! mini-batch. For a sample `(x, y)` with softmax output `p` the gradient is
//! `(p - onehot(y)) ⊗ x` for the weights and `p - onehot(y)` for the bias.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ReplayBuffer;

/// A borrowed `(features, label)` pair. Labels here are always the noisy
/// labels seen on the stream.
pub type Example<'a> = (&'a [f64], usize);

/// Numerically stable softmax cross-entropy in nats.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineModel {
    num_classes: usize,
    dim: usize,
    /// Row-major `num_classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    learning_rate: f64,
    step_count: u64,
}

impl OnlineModel {
    /// Weights drawn from `uniform(-0.01, 0.01)`, bias zero.
    pub fn new(num_classes: usize, dim: usize, learning_rate: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(num_classes, dim, learning_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut model.weights {
            *w = rng.random_range(-0.01..0.01);
        }
        Ok(model)
    }

    pub fn zeros(num_classes: usize, dim: usize, learning_rate: f64) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "model needs at least one class and one feature".into(),
            ));
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        Ok(OnlineModel {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
            learning_rate,
            step_count: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weights (row-major) followed by bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let n = self.weights.len();
        if params.len() != n + self.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: n + self.bias.len(),
                actual: params.len(),
            });
        }
        self.weights.copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let z = self.logits(x)?;
        let mut best = 0;
        for (c, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_label(label)?;
        Ok(cross_entropy(&self.logits(x)?, label))
    }

    /// Summed loss and its gradient over `batch`.
    pub fn loss_and_gradient(&self, batch: &[Example<'_>]) -> Result<(f64, Gradient)> {
        let mut grad = Gradient {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        };
        let mut total = 0.0;
        for &(x, label) in batch {
            self.check_input(x)?;
            self.check_label(label)?;
            let z = self.logits_unchecked(x);
            total += cross_entropy(&z, label);
            let mut delta = softmax(&z);
            delta[label] -= 1.0;
            for (c, d) in delta.iter().enumerate() {
                let row = &mut grad.weights[c * self.dim..(c + 1) * self.dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
                grad.bias[c] += d;
            }
        }
        Ok((total, grad))
    }

    /// One gradient step on the summed batch loss. Returns the mean loss of
    /// the batch before the update.
    pub fn sgd_step(&mut self, batch: &[Example<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty mini-batch".into()));
        }
        let (total, grad) = self.loss_and_gradient(batch)?;
        let mean_loss = total / batch.len() as f64;
        let finite = grad
            .weights
            .iter()
            .chain(&grad.bias)
            .all(|g| g.is_finite());
        if !finite || !total.is_finite() {
            return Err(Error::NonFiniteGradient {
                step: self.step_count,
                batch_len: batch.len(),
                mean_loss,
            });
        }
        let lr = self.learning_rate;
        if lr != 0.0 {
            for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
                *w -= lr * g;
            }
            for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
                *b -= lr * g;
            }
        }
        self.step_count += 1;
        Ok(mean_loss)
    }

    /// Fraction of `examples` whose arg-max prediction equals the label.
    pub fn accuracy(&self, examples: &[Example<'_>]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for &(x, label) in examples {
            if self.predict_class(x)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            num_classes: self.num_classes,
            feature_dim: self.dim,
            step_count: self.step_count,
            learning_rate: self.learning_rate,
            params: self.params(),
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let mut model = Self::zeros(ckpt.num_classes, ckpt.feature_dim, ckpt.learning_rate)?;
        model.set_params(&ckpt.params)?;
        model.step_count = ckpt.step_count;
        Ok(model)
    }
}

/// Flat parameter dump with a small header, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub step_count: u64,
    pub learning_rate: f64,
    /// Weights row-major, then bias.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Mini-batch SGD over the memory contents, reshuffled every epoch.
///
/// The model's own learning rate is restored afterwards. Returns the mean
/// per-sample loss of each epoch, accumulated before each step.
pub fn train_on_memory(
    model: &mut OnlineModel,
    memory: &dyn ReplayBuffer,
    opts: &MemoryTraining,
) -> Result<Vec<f64>> {
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "memory training needs epochs >= 1 and batch_size >= 1".into(),
        ));
    }
    let mut examples: Vec<Example<'_>> = memory
        .samples()
        .map(|s| (s.features.as_slice(), s.noisy_label))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let saved_rate = model.learning_rate;
    model.learning_rate = opts.learning_rate;

    let mut trace = Vec::with_capacity(opts.epochs);
    let result = (|| {
        for _ in 0..opts.epochs {
            examples.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in examples.chunks(opts.batch_size) {
                total += model.sgd_step(batch)? * batch.len() as f64;
            }
            trace.push(total / examples.len() as f64);
        }
        Ok(())
    })();
    model.learning_rate = saved_rate;
    result.map(|()| trace)
}
