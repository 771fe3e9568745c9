//! Mini-batch Adam training with a minimum epoch count and a loss-threshold
//! early stop.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::dataset::{example_seed, LabeledExample};
use crate::error::{ensure_param, Error, Result};
use crate::models::{argmax_rows, batch_array, Mode, Network};

/// Keeps dropout masks independent of the shuffle stream.
const DROPOUT_STREAM: u64 = 0x6472_6f70;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be > 0");
        ensure_param!((0.0..1.0).contains(&self.beta1), "beta1 must be in [0, 1)");
        ensure_param!((0.0..1.0).contains(&self.beta2), "beta2 must be in [0, 1)");
        ensure_param!(self.epsilon > 0.0, "epsilon must be > 0");
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        let zeros: Vec<Array> = params.iter().map(|p| Array::zeros(p.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [Array], grads: &[Array], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    ensure_param!(
        params.len() == grads.len() && params.len() == state.m.len(),
        "parameter, gradient and state counts differ"
    );
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - config.beta1.powf(t);
    let c2 = 1.0 - config.beta2.powf(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
        }
        for (((p, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Minimum epochs before the loss threshold may stop training.
    pub epochs: usize,
    /// Hard epoch limit; `None` means `epochs`.
    pub max_epochs: Option<usize>,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss_stop: f64,
    pub seed: u64,
    /// Rescale the global gradient norm to at most this value.
    pub grad_clip: Option<f64>,
    /// Wall-clock cap in seconds; no epoch starts that is expected to end past it.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            max_epochs: None,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            loss_stop: 0.005,
            seed: 0,
            grad_clip: None,
            time_budget_s: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.epochs >= 1, "epochs must be >= 1");
        ensure_param!(self.batch_size >= 1, "batch_size must be >= 1");
        if let Some(max) = self.max_epochs {
            ensure_param!(max >= self.epochs, "max_epochs ({max}) must be >= epochs ({})", self.epochs);
        }
        if let Some(c) = self.grad_clip {
            ensure_param!(c > 0.0, "grad_clip must be > 0");
        }
        if let Some(b) = self.time_budget_s {
            ensure_param!(b > 0.0, "time_budget_s must be > 0");
        }
        self.optimizer.validate()
    }

    pub fn epoch_limit(&self) -> usize {
        self.max_epochs.unwrap_or(self.epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossThreshold,
    EpochLimit,
    TimeBudget,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_network: Network,
    pub best_network: Network,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub elapsed: Duration,
}

/// Trains `network` on already standardized examples.
pub fn train(network: Network, examples: &[LabeledExample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(network, examples, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    mut network: Network,
    examples: &[LabeledExample],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    ensure_param!(!examples.is_empty(), "training set is empty");
    let classes = network.spec.classes;
    if let Some(bad) = examples.iter().find(|e| usize::from(e.label) >= classes) {
        return Err(Error::Parameter(format!("label {} out of range for a {classes}-class head", bad.label)));
    }
    let shape = network.spec.input;

    let start = Instant::now();
    let mut state = AdamState::new(&network.params.values);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut last_epoch_time = Duration::ZERO;
    let mut stop_reason = StopReason::EpochLimit;

    for epoch in 1..=config.epoch_limit() {
        if let Some(budget) = config.time_budget_s {
            if epoch > 1 && (start.elapsed() + last_epoch_time).as_secs_f64() > budget {
                stop_reason = StopReason::TimeBudget;
                break;
            }
        }
        let epoch_start = Instant::now();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(example_seed(config.seed, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&LabeledExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let batch = batch_array(&refs, shape)?;
            let labels: Vec<usize> = refs.iter().map(|e| usize::from(e.label)).collect();
            let mut dropout_rng =
                ChaCha8Rng::seed_from_u64(example_seed(config.seed ^ DROPOUT_STREAM, ((epoch as u64) << 32) | b as u64));
            let (loss, mut grads, logits) =
                network.loss_and_gradients(&batch, &labels, Mode::Train(&mut dropout_rng)).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {}: {msg}", b + 1)),
                    other => other,
                })?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {}: loss diverged ({loss})", b + 1)));
            }
            if let Some(clip) = config.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            adam_step(&mut network.params.values, &grads, &mut state, &config.optimizer)?;
            loss_sum += loss * chunk.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
        }

        let record =
            EpochRecord { epoch, mean_loss: loss_sum / examples.len() as f64, accuracy: correct as f64 / examples.len() as f64 };
        log::info!("epoch {epoch}: loss {:.6}, accuracy {:.4}", record.mean_loss, record.accuracy);
        progress(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(l, _, _)| record.mean_loss < *l) {
            best = Some((record.mean_loss, epoch, network.clone()));
        }
        last_epoch_time = epoch_start.elapsed();
        if epoch >= config.epochs && record.mean_loss < config.loss_stop {
            stop_reason = StopReason::LossThreshold;
            break;
        }
    }

    let (_, best_epoch, best_network) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { final_network: network, best_network, best_epoch, history, stop_reason, elapsed: start.elapsed() })
}

fn clip_global_norm(grads: &mut [Array], max_norm: f64) {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Array::vector(vec![1.0, -2.0])];
        let g = vec![Array::zeros(&[2])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Array::vector(vec![0.0, 0.0])];
        let g = vec![Array::vector(vec![3.0, -0.01])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-10);
        assert!((p[0].data()[1] - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { max_epochs: Some(10), ..TrainConfig::default() }.validate().is_err());
        let bad_lr = TrainConfig { optimizer: AdamConfig { learning_rate: 0.0, ..AdamConfig::default() }, ..TrainConfig::default() };
        assert!(bad_lr.validate().is_err());
    }

    #[test]
    fn clipping_rescales() {
        let mut g = vec![Array::vector(vec![3.0]), Array::vector(vec![4.0])];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((g[1].data()[0] - 0.8).abs() < 1e-15);
    }
}
