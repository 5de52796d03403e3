//! Minibatch training of [`Mlp`] denoisers with Adam.

use crate::denoisers::{Mlp, PixelExample};
use crate::error::{Error, Result};
use crate::losses::loss_gradient;
use crate::rng::{self, SeededRng};
use rand::Rng;

/// Produces training batches. Sources that synthesise targets (noise
/// draws, shrinkage gates) do so from the supplied generator, so a run is
/// a pure function of the training seed.
pub trait ExampleSource: Sync {
    fn batch(&self, batch_size: usize, rng: &mut SeededRng) -> Vec<PixelExample>;
}

/// A finite dataset. Requests at least as large as the dataset return it
/// whole and in order (full-batch training); smaller requests sample with
/// replacement.
#[derive(Clone, Debug)]
pub struct FixedDataset(pub Vec<PixelExample>);

impl ExampleSource for FixedDataset {
    fn batch(&self, batch_size: usize, rng: &mut SeededRng) -> Vec<PixelExample> {
        if batch_size >= self.0.len() {
            return self.0.clone();
        }
        (0..batch_size).map(|_| self.0[rng.random_range(0..self.0.len())].clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, steps_per_epoch: 200, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean pre-update batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

pub fn train_denoiser(net: &mut Mlp, source: &dyn ExampleSource, cfg: &TrainConfig) -> Result<TrainReport> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut opt = Adam::new(net.num_params(), cfg.lr);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let batch = source.batch(cfg.batch_size, &mut rng);
            let g = loss_gradient(net, &batch).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step: report.steps, loss: f64::NAN },
                other => other,
            })?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged { step: report.steps, loss: g.loss });
            }
            total += g.loss;
            opt.step(net.params_mut(), &g.grad);
            report.steps += 1;
        }
        report.epoch_losses.push(total / cfg.steps_per_epoch.max(1) as f64);
    }
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged { step: report.steps, loss: f64::NAN });
    }
    Ok(report)
}
