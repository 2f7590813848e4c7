//! Mini-batch training against negative sum-rate.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::channel::{ChannelMatrix, SystemConfig};
use crate::math::{l2_norm, sqrt};
use crate::{rng, Error, Result};

/// A model with a flat parameter view and a per-sample loss gradient.
pub trait Trainable: Clone {
    fn to_flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]);
    fn sample_loss(&self, h: &ChannelMatrix, sys: &SystemConfig) -> Result<f64>;
    fn sample_loss_grad(&self, h: &ChannelMatrix, sys: &SystemConfig) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("moment decay rates must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adaptive-moment (or plain) gradient step on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: TrainConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    pub fn new(cfg: TrainConfig, n: usize) -> Self {
        Self {
            cfg,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = &self.cfg;
        match c.optimizer {
            OptimizerKind::Sgd => {
                params.iter_mut().zip(grad).for_each(|(p, g)| *p -= c.learning_rate * g);
            }
            OptimizerKind::Adam => {
                self.steps += 1;
                let bias1 = 1.0 - libm::pow(c.beta1, self.steps as f64);
                let bias2 = 1.0 - libm::pow(c.beta2, self.steps as f64);
                for (n, p) in params.iter_mut().enumerate() {
                    let g = grad[n];
                    self.first[n] = c.beta1 * self.first[n] + (1.0 - c.beta1) * g;
                    self.second[n] = c.beta2 * self.second[n] + (1.0 - c.beta2) * g * g;
                    let m_hat = self.first[n] / bias1;
                    let v_hat = self.second[n] / bias2;
                    *p -= c.learning_rate * m_hat / (sqrt(v_hat) + c.adam_eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: T,
    /// Mean per-sample loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Sequential mean over the batch, in batch order.
pub fn batch_mean<T: Trainable>(model: &T, batch: &[&ChannelMatrix], sys: &SystemConfig) -> Result<(f64, Vec<f64>)> {
    let mut acc: Option<Vec<f64>> = None;
    let mut total = 0.0;
    for h in batch {
        let (l, g) = model.sample_loss_grad(h, sys)?;
        total += l;
        match &mut acc {
            None => acc = Some(g),
            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
        }
    }
    let mut grad = acc.ok_or_else(|| Error::invalid("empty batch"))?;
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|x| *x *= scale);
    Ok((total * scale, grad))
}

pub fn train<T: Trainable>(
    dataset: &[ChannelMatrix],
    init: &T,
    tc: &TrainConfig,
    sys: &SystemConfig,
) -> Result<TrainOutcome<T>> {
    train_with(dataset, init, tc, sys, batch_mean)
}

/// Training loop with a caller-supplied batch evaluator (e.g. a parallel one).
/// The evaluator must return the batch-mean loss and gradient.
pub fn train_with<T, F>(
    dataset: &[ChannelMatrix],
    init: &T,
    tc: &TrainConfig,
    sys: &SystemConfig,
    eval: F,
) -> Result<TrainOutcome<T>>
where
    T: Trainable,
    F: Fn(&T, &[&ChannelMatrix], &SystemConfig) -> Result<(f64, Vec<f64>)>,
{
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    tc.validate()?;
    let mut model = init.clone();
    let mut params = model.to_flat();
    let mut opt = Optimizer::new(*tc, params.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle = rng::stream(tc.seed);
    let mut loss_history = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<&ChannelMatrix> = chunk.iter().map(|&n| &dataset[n]).collect();
            let (loss, grad) = eval(&model, &batch, sys)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    param_norm: l2_norm(&params),
                });
            }
            epoch_total += loss * chunk.len() as f64;
            opt.step(&mut params, &grad);
            model.set_flat(&params);
        }
        loss_history.push(epoch_total / dataset.len() as f64);
    }
    Ok(TrainOutcome { model, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut opt = Optimizer::new(cfg, 2);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[0.3, -5.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn sgd_step() {
        let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, learning_rate: 0.5, ..Default::default() };
        let mut opt = Optimizer::new(cfg, 1);
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]);
        assert_eq!(p, [0.0]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
