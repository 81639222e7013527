//! Mini-batch gradient descent shared by the gated-fusion network and the MLP baseline.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Example;
use crate::net::{cross_entropy, Probs};
use crate::rng::seeded_rng;

/// A differentiable classifier whose parameters are a list of flat tensors.
pub trait Trainable: Clone {
    /// Same shape, all zeros. Used as a gradient accumulator.
    fn zeros_like(&self) -> Self;

    /// Adds the example's loss gradient into `grad` and returns its loss.
    fn accumulate_gradient(&self, example: &Example, grad: &mut Self) -> Result<f64>;

    fn probabilities(&self, example: &Example) -> Result<Probs>;

    fn tensors(&self) -> Vec<&[f64]>;

    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffling seed. Pipelines derive it from the run seed.
    #[serde(skip)]
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::default(),
            patience: Some(10),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation(
                "epochs and batch_size must be at least 1",
            ));
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::validation(
                    "adam requires 0 <= beta < 1 and epsilon > 0",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,validation_loss\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{:.17e},{:.17e}\n",
                r.epoch, r.train_loss, r.validation_loss
            ));
        }
        s
    }
}

pub fn mean_loss<M: Trainable>(model: &M, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for e in examples {
        total += cross_entropy(&model.probabilities(e)?, e.label);
    }
    Ok(total / examples.len() as f64)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new<M: Trainable>(kind: Optimizer, lr: f64, model: &M) -> Self {
        let shapes: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            kind,
            lr,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    fn apply<M: Trainable>(&mut self, model: &mut M, grad: &M) {
        self.step += 1;
        let grads = grad.tensors();
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in model.tensors_mut().into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in model
                    .tensors_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

fn scale<M: Trainable>(grad: &mut M, factor: f64) {
    for t in grad.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= factor);
    }
}

fn reset<M: Trainable>(grad: &mut M) {
    for t in grad.tensors_mut() {
        t.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// One optimizer step on the mean gradient of `batch`. Returns the mean loss.
pub fn gradient_step<M: Trainable>(model: &mut M, batch: &[&Example], lr: f64) -> Result<f64> {
    let mut grad = model.zeros_like();
    let mut loss = 0.0;
    for e in batch {
        loss += model.accumulate_gradient(e, &mut grad)?;
    }
    scale(&mut grad, 1.0 / batch.len() as f64);
    let mut opt = OptimizerState::new(Optimizer::Sgd, lr, model);
    opt.apply(model, &grad);
    Ok(loss / batch.len() as f64)
}

/// Trains with seeded shuffling and returns the parameters from the epoch
/// with the lowest validation loss (training loss when `validation` is empty).
pub fn train<M: Trainable>(
    mut model: M,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
) -> Result<(M, TrainingHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, &model);
    let mut grad = model.zeros_like();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            reset(&mut grad);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_gradient(&train_set[i], &mut grad)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}; learning rate {:e} is probably too high",
                    cfg.learning_rate
                )));
            }
            scale(&mut grad, 1.0 / batch.len() as f64);
            opt.apply(&mut model, &grad);
            // The clamped loss stays finite even when parameters do not.
            if model
                .tensors()
                .iter()
                .any(|t| t.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Training(format!(
                    "non-finite parameters in epoch {epoch}; learning rate {:e} is probably too high",
                    cfg.learning_rate
                )));
            }
        }

        let train_loss = mean_loss(&model, train_set)?;
        let validation_loss = if validation.is_empty() {
            train_loss
        } else {
            mean_loss(&model, validation)?
        };
        if !train_loss.is_finite() || !validation_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss after epoch {epoch}; learning rate {:e} is probably too high",
                cfg.learning_rate
            )));
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} validation {validation_loss:.5}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });

        if best.as_ref().is_none_or(|(b, _)| validation_loss < *b) {
            best = Some((validation_loss, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}

pub fn accuracy<M: Trainable>(model: &M, examples: &[Example]) -> Result<f64> {
    let mut correct = 0usize;
    for e in examples {
        if crate::evaluation::argmax(&model.probabilities(e)?) == e.label.index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{Mlp, MlpArch};
    use crate::net::{GluMarkerArch, GluMarkerNet};
    use crate::types::ControlLabel;
    use rand::Rng as _;

    /// Three well-separated clusters; the discrete part one-hot encodes a noisy copy of the class.
    fn separable(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = seeded_rng(seed);
        let centers = [[3.0, 0.0], [-1.5, 2.6], [-1.5, -2.6]];
        (0..n)
            .map(|i| {
                let label = ControlLabel::ALL[i % 3];
                let c = centers[label.index()];
                let f_c = vec![
                    c[0] + rng.random_range(-0.8..0.8),
                    c[1] + rng.random_range(-0.8..0.8),
                ];
                let mut f_d = vec![0.0; 3];
                f_d[rng.random_range(0..3)] = 1.0;
                Example {
                    f_c,
                    f_d,
                    label,
                    patient_id: format!("p{}", i % 7),
                    target_day: i as i64,
                }
            })
            .collect()
    }

    fn small_net(seed: u64) -> GluMarkerNet {
        let arch = GluMarkerArch {
            continuous_hidden: vec![8, 4],
            discrete_hidden: vec![6, 4],
        };
        GluMarkerNet::new(&arch, 2, 3, seed).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 80,
            batch_size: 16,
            seed: 3,
            patience: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let data = separable(300, 1);
        let (net, history) = train(small_net(0), &data, &[], &cfg()).unwrap();
        assert!(accuracy(&net, &data).unwrap() >= 0.95);
        assert_eq!(history.epochs.len(), 80);

        let mlp = Mlp::new(2, 3, &MlpArch { hidden: vec![8] }, 0).unwrap();
        let (mlp, _) = train(mlp, &data, &[], &cfg()).unwrap();
        assert!(accuracy(&mlp, &data).unwrap() >= 0.95);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let data = separable(90, 2);
        let c = TrainConfig { epochs: 5, ..cfg() };
        let (a, ha) = train(small_net(4), &data, &data[..30], &c).unwrap();
        let (b, hb) = train(small_net(4), &data, &data[..30], &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let (d, _) = train(
            small_net(4),
            &data,
            &data[..30],
            &TrainConfig { seed: 4, ..c },
        )
        .unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = separable(60, 3);
        let start = small_net(1);
        for optimizer in [Optimizer::Sgd, Optimizer::default()] {
            let c = TrainConfig {
                learning_rate: 0.0,
                epochs: 3,
                optimizer,
                ..cfg()
            };
            let (out, _) = train(start.clone(), &data, &[], &c).unwrap();
            assert_eq!(out, start);
        }
    }

    #[test]
    fn repeated_example_loss_is_monotone_at_small_step() {
        let data = separable(1, 5);
        let batch = [&data[0]];
        let mut net = small_net(2);
        let mut prev = mean_loss(&net, &data).unwrap();
        for _ in 0..50 {
            gradient_step(&mut net, &batch, 1e-4).unwrap();
            let now = mean_loss(&net, &data).unwrap();
            assert!(now <= prev, "{now} > {prev}");
            prev = now;
        }
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let data = separable(90, 6);
        let c = TrainConfig {
            epochs: 200,
            patience: Some(3),
            learning_rate: 0.05,
            ..cfg()
        };
        let (net, h) = train(small_net(3), &data[..60], &data[60..], &c).unwrap();
        let best = &h.epochs[h.best_epoch - 1];
        assert!(h
            .epochs
            .iter()
            .all(|r| r.validation_loss >= best.validation_loss));
        assert!((mean_loss(&net, &data[60..]).unwrap() - best.validation_loss).abs() < 1e-12);
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let mut data = separable(30, 7);
        for e in &mut data {
            e.f_c.iter_mut().for_each(|v| *v *= 1e150);
        }
        let c = TrainConfig {
            learning_rate: 1e10,
            optimizer: Optimizer::Sgd,
            ..cfg()
        };
        let err = train(small_net(0), &data, &[], &c).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{err}");
    }

    #[test]
    fn rejects_bad_config() {
        for c in [
            TrainConfig { epochs: 0, ..cfg() },
            TrainConfig {
                batch_size: 0,
                ..cfg()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..cfg()
            },
        ] {
            assert!(c.validate().is_err());
        }
        assert!(train(small_net(0), &[], &[], &cfg()).is_err());
    }
}
