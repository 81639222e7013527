//! Comparison classifiers: Gaussian naive Bayes, a one-vs-rest linear
//! max-margin classifier, and a single-stack MLP. All of them read the
//! concatenation `[f_c; f_d]` of the same standardized inputs the fusion
//! network sees.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Example;
use crate::net::{
    cross_entropy, softmax, stack_backward, stack_forward, Activation, DenseLayer, Probs,
    NUM_CLASSES,
};
use crate::rng::seeded_rng;
use crate::train::{train, TrainConfig, Trainable, TrainingHistory};
use crate::types::ControlLabel;

fn joined(f_c: &[f64], f_d: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(f_c.len() + f_d.len());
    x.extend_from_slice(f_c);
    x.extend_from_slice(f_d);
    x
}

fn check_dims(f_c: &[f64], f_d: &[f64], continuous_dim: usize, total: usize) -> Result<()> {
    if f_c.len() != continuous_dim || f_c.len() + f_d.len() != total {
        return Err(Error::validation(format!(
            "input dimension mismatch: got ({}, {}), model expects ({}, {})",
            f_c.len(),
            f_d.len(),
            continuous_dim,
            total - continuous_dim
        )));
    }
    Ok(())
}

fn example_dims(examples: &[Example]) -> Result<(usize, usize)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Training("training set is empty".into()))?;
    let dims = (first.f_c.len(), first.f_d.len());
    if examples.iter().any(|e| (e.f_c.len(), e.f_d.len()) != dims) {
        return Err(Error::data("examples have inconsistent dimensions"));
    }
    Ok(dims)
}

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes with per-class, per-feature mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub continuous_dim: usize,
    pub priors: [f64; NUM_CLASSES],
    /// `means[k][j]`: mean of feature `j` in class `k`.
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(examples: &[Example], variance_floor: f64) -> Result<Self> {
        if !(variance_floor > 0.0) {
            return Err(Error::validation("variance floor must be positive"));
        }
        let (cd, dd) = example_dims(examples)?;
        let dim = cd + dd;
        let mut counts = [0usize; NUM_CLASSES];
        let mut means = vec![vec![0.0; dim]; NUM_CLASSES];
        for e in examples {
            let k = e.label.index();
            counts[k] += 1;
            for (m, v) in means[k].iter_mut().zip(e.f_c.iter().chain(&e.f_d)) {
                *m += v;
            }
        }
        if let Some(k) = (0..NUM_CLASSES).find(|&k| counts[k] == 0) {
            return Err(Error::Training(format!(
                "class {} is absent from the training data",
                ControlLabel::ALL[k]
            )));
        }
        for (k, m) in means.iter_mut().enumerate() {
            m.iter_mut().for_each(|v| *v /= counts[k] as f64);
        }
        let mut variances = vec![vec![0.0; dim]; NUM_CLASSES];
        for e in examples {
            let k = e.label.index();
            for ((s, v), m) in variances[k]
                .iter_mut()
                .zip(e.f_c.iter().chain(&e.f_d))
                .zip(&means[k])
            {
                *s += (v - m) * (v - m);
            }
        }
        for (k, var) in variances.iter_mut().enumerate() {
            var.iter_mut()
                .for_each(|v| *v = (*v / counts[k] as f64).max(variance_floor));
        }
        let n = examples.len() as f64;
        Ok(Self {
            continuous_dim: cd,
            priors: counts.map(|c| c as f64 / n),
            means,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        check_dims(f_c, f_d, self.continuous_dim, self.dim())?;
        let mut log_post = [0.0; NUM_CLASSES];
        for (k, lp) in log_post.iter_mut().enumerate() {
            *lp = self.priors[k].ln()
                + f_c
                    .iter()
                    .chain(f_d)
                    .zip(self.means[k].iter().zip(&self.variances[k]))
                    .map(|(x, (m, v))| {
                        -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m) * (x - m) / (2.0 * v)
                    })
                    .sum::<f64>();
        }
        Ok(softmax(&log_post))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSvcConfig {
    /// Weight of the mean hinge loss against `0.5 * ||w||^2`.
    pub c: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl LinearSvcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || !(self.learning_rate > 0.0)
            || !(self.c >= 0.0)
        {
            return Err(Error::validation(
                "linear svc needs epochs >= 1, batch_size >= 1, learning_rate > 0, C >= 0",
            ));
        }
        Ok(())
    }
}

impl Default for LinearSvcConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            epochs: 40,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Three one-vs-rest linear classifiers trained on L2-regularized hinge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvc {
    pub continuous_dim: usize,
    /// `weights[k]` scores class `k` against the rest.
    pub weights: Vec<Vec<f64>>,
    pub biases: [f64; NUM_CLASSES],
}

impl LinearSvc {
    pub fn zeros(continuous_dim: usize, discrete_dim: usize) -> Self {
        Self {
            continuous_dim,
            weights: vec![vec![0.0; continuous_dim + discrete_dim]; NUM_CLASSES],
            biases: [0.0; NUM_CLASSES],
        }
    }

    pub fn fit(examples: &[Example], cfg: &LinearSvcConfig) -> Result<Self> {
        let (cd, dd) = example_dims(examples)?;
        let mut model = Self::zeros(cd, dd);
        model.train_epochs(examples, cfg)?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn margins(&self, x: &[f64]) -> [f64; NUM_CLASSES] {
        std::array::from_fn(|k| {
            self.weights[k]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + self.biases[k]
        })
    }

    /// Sum over the three classes of `0.5 ||w_k||^2 + C * mean hinge`.
    pub fn objective(&self, examples: &[Example], c: f64) -> f64 {
        let reg: f64 = self.weights.iter().flatten().map(|w| 0.5 * w * w).sum();
        let mut hinge = 0.0;
        for e in examples {
            let m = self.margins(&joined(&e.f_c, &e.f_d));
            for (k, mk) in m.iter().enumerate() {
                let y = if e.label.index() == k { 1.0 } else { -1.0 };
                hinge += (1.0 - y * mk).max(0.0);
            }
        }
        reg + c * hinge / examples.len().max(1) as f64
    }

    /// Continues subgradient descent from the current weights with step
    /// `lr / sqrt(epoch)`. Returns the objective after each epoch.
    pub fn train_epochs(
        &mut self,
        examples: &[Example],
        cfg: &LinearSvcConfig,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        let (cd, dd) = example_dims(examples)?;
        if cd != self.continuous_dim || cd + dd != self.dim() {
            return Err(Error::validation(
                "examples do not match the model dimensions",
            ));
        }
        let xs: Vec<Vec<f64>> = examples.iter().map(|e| joined(&e.f_c, &e.f_d)).collect();
        let mut rng = seeded_rng(cfg.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let dim = self.dim();
        for epoch in 1..=cfg.epochs {
            let lr = cfg.learning_rate / (epoch as f64).sqrt();
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let scale = cfg.c / batch.len() as f64;
                for k in 0..NUM_CLASSES {
                    let mut gw: Vec<f64> = self.weights[k].clone();
                    let mut gb = 0.0;
                    for &i in batch {
                        let x = &xs[i];
                        let y = if examples[i].label.index() == k {
                            1.0
                        } else {
                            -1.0
                        };
                        let m: f64 = self.weights[k]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                            + self.biases[k];
                        if y * m < 1.0 {
                            for j in 0..dim {
                                gw[j] -= scale * y * x[j];
                            }
                            gb -= scale * y;
                        }
                    }
                    for (w, g) in self.weights[k].iter_mut().zip(&gw) {
                        *w -= lr * g;
                    }
                    self.biases[k] -= lr * gb;
                }
            }
            let obj = self.objective(examples, cfg.c);
            if !obj.is_finite() {
                return Err(Error::Training(format!(
                    "linear svc objective diverged in epoch {epoch}"
                )));
            }
            history.push(obj);
        }
        Ok(history)
    }

    /// Softmax over the three one-vs-rest margins.
    pub fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        check_dims(f_c, f_d, self.continuous_dim, self.dim())?;
        Ok(softmax(&self.margins(&joined(f_c, f_d))))
    }
}

/// Dense ReLU stack over `[f_c; f_d]` ending in three softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub continuous_dim: usize,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpArch {
    pub hidden: Vec<usize>,
}

impl Default for MlpArch {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
        }
    }
}

impl Mlp {
    pub fn new(
        continuous_dim: usize,
        discrete_dim: usize,
        arch: &MlpArch,
        seed: u64,
    ) -> Result<Self> {
        if arch.hidden.is_empty() || arch.hidden.contains(&0) {
            return Err(Error::validation(
                "mlp needs at least one hidden layer of positive width",
            ));
        }
        let mut rng = seeded_rng(seed);
        let mut prev = continuous_dim + discrete_dim;
        let mut layers = Vec::with_capacity(arch.hidden.len() + 1);
        for &w in &arch.hidden {
            layers.push(DenseLayer::glorot(prev, w, Activation::Relu, &mut rng));
            prev = w;
        }
        layers.push(DenseLayer::glorot(
            prev,
            NUM_CLASSES,
            Activation::Identity,
            &mut rng,
        ));
        Ok(Self {
            continuous_dim,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Format(
                "mlp needs a hidden and an output layer".into(),
            ));
        }
        let out = crate::net::check_stack(&self.layers, self.input_dim(), "mlp")?;
        if out != NUM_CLASSES || self.continuous_dim > self.input_dim() {
            return Err(Error::Format("mlp output must have 3 units".into()));
        }
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<Vec<f64>> {
        stack_forward(&self.layers, x)
    }

    pub fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        check_dims(f_c, f_d, self.continuous_dim, self.input_dim())?;
        let acts = self.logits(&joined(f_c, f_d));
        Ok(softmax(acts.last().expect("nonempty stack")))
    }
}

impl Trainable for Mlp {
    fn zeros_like(&self) -> Self {
        Self {
            continuous_dim: self.continuous_dim,
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    fn accumulate_gradient(&self, example: &Example, grad: &mut Self) -> Result<f64> {
        check_dims(
            &example.f_c,
            &example.f_d,
            self.continuous_dim,
            self.input_dim(),
        )?;
        let x = joined(&example.f_c, &example.f_d);
        let acts = self.logits(&x);
        let probs = softmax(acts.last().expect("nonempty stack"));
        let mut d = probs.to_vec();
        d[example.label.index()] -= 1.0;
        stack_backward(&self.layers, &x, &acts, d, &mut grad.layers);
        Ok(cross_entropy(&probs, example.label))
    }

    fn probabilities(&self, example: &Example) -> Result<Probs> {
        self.predict_proba(&example.f_c, &example.f_d)
    }

    fn tensors(&self) -> Vec<&[f64]> {
        crate::net::layer_tensors(self.layers.iter())
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        crate::net::layer_tensors_mut(self.layers.iter_mut())
    }
}

/// Builds and trains an MLP; `init_seed` fixes the initial weights.
pub fn fit_mlp(
    train_set: &[Example],
    validation: &[Example],
    arch: &MlpArch,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(Mlp, TrainingHistory)> {
    let (cd, dd) = example_dims(train_set)?;
    let model = Mlp::new(cd, dd, arch, init_seed)?;
    train(model, train_set, validation, cfg)
}
