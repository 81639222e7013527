//! Two-branch gated-fusion classifier.
//!
//! The continuous branch maps `f_c` to `r_c`, the discrete branch maps `f_d`
//! to `r_d` (both ReLU dense stacks ending at the same width). A sigmoid gate
//! over `[r_c; r_d]` mixes them per dimension,
//!
//! ```text
//! g     = sigmoid(W_g [r_c; r_d] + b_g)
//! fused = g * r_c + (1 - g) * r_d
//! probs = softmax(W_o fused + b_o)
//! ```
//!
//! and gradients are derived by hand, including the product rule through the
//! gate (`d fused / d g = r_c - r_d`).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Example;
use crate::rng::{seeded_rng, Rng};
use crate::train::Trainable;
use crate::types::ControlLabel;

pub const NUM_CLASSES: usize = 3;
pub const LOG_CLAMP: f64 = 1e-12;

pub type Probs = [f64; NUM_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Probs {
    debug_assert_eq!(logits.len(), NUM_CLASSES);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// Cross-entropy `-ln p[label]` with the probability clamped at 1e-12.
pub fn cross_entropy(probs: &Probs, label: ControlLabel) -> f64 {
    -probs[label.index()].max(LOG_CLAMP).ln()
}

/// Fully connected layer with `weights` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs, activation);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs, self.activation)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| {
                let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
                self.activation.apply(z)
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` given the layer input `x`,
    /// its output `a` and `dL/da`. Returns `dL/dx` when `need_input_grad`.
    fn backward(
        &self,
        x: &[f64],
        a: &[f64],
        da: &[f64],
        grad: &mut DenseLayer,
        need_input_grad: bool,
    ) -> Vec<f64> {
        let mut dx = if need_input_grad {
            vec![0.0; self.inputs]
        } else {
            Vec::new()
        };
        for o in 0..self.outputs {
            let dz = da[o] * self.activation.derivative_from_output(a[o]);
            if dz == 0.0 {
                continue;
            }
            grad.biases[o] += dz;
            let row = o * self.inputs;
            for (g, v) in grad.weights[row..row + self.inputs].iter_mut().zip(x) {
                *g += dz * v;
            }
            if need_input_grad {
                for (d, w) in dx.iter_mut().zip(&self.weights[row..row + self.inputs]) {
                    *d += dz * w;
                }
            }
        }
        dx
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }
}

/// Runs a stack, returning each layer's output.
pub(crate) fn stack_forward(layers: &[DenseLayer], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for layer in layers {
        let input = acts.last().map_or(x, Vec::as_slice);
        let out = layer.forward(input);
        acts.push(out);
    }
    acts
}

/// Backpropagates `d_out` through a stack, accumulating into `grads`.
pub(crate) fn stack_backward(
    layers: &[DenseLayer],
    x: &[f64],
    acts: &[Vec<f64>],
    d_out: Vec<f64>,
    grads: &mut [DenseLayer],
) {
    let mut delta = d_out;
    for i in (0..layers.len()).rev() {
        let input = if i == 0 { x } else { &acts[i - 1] };
        delta = layers[i].backward(input, &acts[i], &delta, &mut grads[i], i > 0);
    }
}

pub(crate) fn check_stack(layers: &[DenseLayer], input: usize, what: &str) -> Result<usize> {
    let mut width = input;
    for (i, l) in layers.iter().enumerate() {
        if l.inputs != width
            || l.weights.len() != l.inputs * l.outputs
            || l.biases.len() != l.outputs
        {
            return Err(Error::Format(format!(
                "{what} layer {i}: expected {width} inputs, found {}x{} weights and {} biases",
                l.outputs,
                l.inputs,
                l.biases.len()
            )));
        }
        width = l.outputs;
    }
    Ok(width)
}

/// Hidden widths of the two branches; the last width of each is the shared
/// representation width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GluMarkerArch {
    pub continuous_hidden: Vec<usize>,
    pub discrete_hidden: Vec<usize>,
}

impl Default for GluMarkerArch {
    fn default() -> Self {
        Self {
            continuous_hidden: vec![32, 16],
            discrete_hidden: vec![64, 32, 16],
        }
    }
}

impl GluMarkerArch {
    pub fn validate(&self) -> Result<usize> {
        let (Some(&c), Some(&d)) = (self.continuous_hidden.last(), self.discrete_hidden.last())
        else {
            return Err(Error::validation("both branches need at least one layer"));
        };
        if self
            .continuous_hidden
            .iter()
            .chain(&self.discrete_hidden)
            .any(|&w| w == 0)
        {
            return Err(Error::validation("layer widths must be positive"));
        }
        if c != d {
            return Err(Error::validation(format!(
                "branch output widths differ ({c} vs {d}); the fused representation needs one width"
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GluMarkerNet {
    pub branch_c: Vec<DenseLayer>,
    pub branch_d: Vec<DenseLayer>,
    pub gate: DenseLayer,
    pub output: DenseLayer,
}

/// Intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub f_c: Vec<f64>,
    pub f_d: Vec<f64>,
    pub acts_c: Vec<Vec<f64>>,
    pub acts_d: Vec<Vec<f64>>,
    pub concat: Vec<f64>,
    pub gate: Vec<f64>,
    pub fused: Vec<f64>,
    pub probs: Probs,
}

impl ForwardCache {
    pub fn r_c(&self) -> &[f64] {
        self.acts_c.last().expect("nonempty branch")
    }

    pub fn r_d(&self) -> &[f64] {
        self.acts_d.last().expect("nonempty branch")
    }
}

impl GluMarkerNet {
    fn build(
        arch: &GluMarkerArch,
        continuous_dim: usize,
        discrete_dim: usize,
        mut make: impl FnMut(usize, usize, Activation) -> DenseLayer,
    ) -> Result<Self> {
        let width = arch.validate()?;
        if continuous_dim == 0 || discrete_dim == 0 {
            return Err(Error::validation("input dimensions must be positive"));
        }
        let mut stack = |input: usize, widths: &[usize]| {
            let mut prev = input;
            widths
                .iter()
                .map(|&w| {
                    let l = make(prev, w, Activation::Relu);
                    prev = w;
                    l
                })
                .collect::<Vec<_>>()
        };
        let branch_c = stack(continuous_dim, &arch.continuous_hidden);
        let branch_d = stack(discrete_dim, &arch.discrete_hidden);
        let gate = make(2 * width, width, Activation::Sigmoid);
        let output = make(width, NUM_CLASSES, Activation::Identity);
        Ok(Self {
            branch_c,
            branch_d,
            gate,
            output,
        })
    }

    /// Glorot-initialized network.
    pub fn new(
        arch: &GluMarkerArch,
        continuous_dim: usize,
        discrete_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        Self::build(arch, continuous_dim, discrete_dim, |i, o, a| {
            DenseLayer::glorot(i, o, a, &mut rng)
        })
    }

    pub fn zeros(arch: &GluMarkerArch, continuous_dim: usize, discrete_dim: usize) -> Result<Self> {
        Self::build(arch, continuous_dim, discrete_dim, DenseLayer::zeros)
    }

    pub fn continuous_dim(&self) -> usize {
        self.branch_c[0].inputs
    }

    pub fn discrete_dim(&self) -> usize {
        self.branch_d[0].inputs
    }

    pub fn representation_width(&self) -> usize {
        self.output.inputs
    }

    /// Checks the structural invariants (used after loading from disk).
    pub fn validate(&self) -> Result<()> {
        if self.branch_c.is_empty() || self.branch_d.is_empty() {
            return Err(Error::Format("branches must be nonempty".into()));
        }
        let wc = check_stack(&self.branch_c, self.continuous_dim(), "continuous branch")?;
        let wd = check_stack(&self.branch_d, self.discrete_dim(), "discrete branch")?;
        if wc != wd {
            return Err(Error::Format(format!("branch widths differ: {wc} vs {wd}")));
        }
        check_stack(std::slice::from_ref(&self.gate), 2 * wc, "gate")?;
        if self.gate.outputs != wc {
            return Err(Error::Format(format!(
                "gate outputs {} != {wc}",
                self.gate.outputs
            )));
        }
        check_stack(std::slice::from_ref(&self.output), wc, "output")?;
        if self.output.outputs != NUM_CLASSES {
            return Err(Error::Format(format!(
                "output layer must have {NUM_CLASSES} units"
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, f_c: &[f64], f_d: &[f64]) -> Result<()> {
        if f_c.len() != self.continuous_dim() || f_d.len() != self.discrete_dim() {
            return Err(Error::validation(format!(
                "input dimension mismatch: got ({}, {}), model expects ({}, {})",
                f_c.len(),
                f_d.len(),
                self.continuous_dim(),
                self.discrete_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, f_c: &[f64], f_d: &[f64]) -> Result<(Probs, ForwardCache)> {
        self.check_inputs(f_c, f_d)?;
        let acts_c = stack_forward(&self.branch_c, f_c);
        let acts_d = stack_forward(&self.branch_d, f_d);
        let r_c = acts_c.last().expect("nonempty branch");
        let r_d = acts_d.last().expect("nonempty branch");
        let concat: Vec<f64> = r_c.iter().chain(r_d).copied().collect();
        let gate = self.gate.forward(&concat);
        let fused: Vec<f64> = gate
            .iter()
            .zip(r_c.iter().zip(r_d))
            .map(|(g, (c, d))| g * c + (1.0 - g) * d)
            .collect();
        let probs = softmax(&self.output.forward(&fused));
        let cache = ForwardCache {
            f_c: f_c.to_vec(),
            f_d: f_d.to_vec(),
            acts_c,
            acts_d,
            concat,
            gate,
            fused,
            probs,
        };
        Ok((probs, cache))
    }

    pub fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        self.forward(f_c, f_d).map(|(p, _)| p)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            branch_c: self.branch_c.iter().map(DenseLayer::zeros_like).collect(),
            branch_d: self.branch_d.iter().map(DenseLayer::zeros_like).collect(),
            gate: self.gate.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Exact gradient of the cross-entropy loss for one example.
    pub fn backward(&self, cache: &ForwardCache, label: ControlLabel) -> GluMarkerNet {
        let mut grad = self.zeros_like();
        self.backward_into(cache, label, &mut grad);
        grad
    }

    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        label: ControlLabel,
        grad: &mut GluMarkerNet,
    ) {
        let mut d_logits = cache.probs.to_vec();
        d_logits[label.index()] -= 1.0;
        let logits_out: Vec<f64> = self.output.forward(&cache.fused);
        let d_fused =
            self.output
                .backward(&cache.fused, &logits_out, &d_logits, &mut grad.output, true);

        let (r_c, r_d) = (cache.r_c(), cache.r_d());
        let width = r_c.len();
        let mut d_rc = vec![0.0; width];
        let mut d_rd = vec![0.0; width];
        let mut d_gate = vec![0.0; width];
        for i in 0..width {
            let g = cache.gate[i];
            d_rc[i] = d_fused[i] * g;
            d_rd[i] = d_fused[i] * (1.0 - g);
            d_gate[i] = d_fused[i] * (r_c[i] - r_d[i]);
        }
        let d_concat =
            self.gate
                .backward(&cache.concat, &cache.gate, &d_gate, &mut grad.gate, true);
        for i in 0..width {
            d_rc[i] += d_concat[i];
            d_rd[i] += d_concat[width + i];
        }
        stack_backward(
            &self.branch_c,
            &cache.f_c,
            &cache.acts_c,
            d_rc,
            &mut grad.branch_c,
        );
        stack_backward(
            &self.branch_d,
            &cache.f_d,
            &cache.acts_d,
            d_rd,
            &mut grad.branch_d,
        );
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.branch_c
            .iter()
            .chain(&self.branch_d)
            .chain(std::iter::once(&self.gate))
            .chain(std::iter::once(&self.output))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.branch_c
            .iter_mut()
            .chain(self.branch_d.iter_mut())
            .chain(std::iter::once(&mut self.gate))
            .chain(std::iter::once(&mut self.output))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }
}

pub(crate) fn layer_tensors<'a>(layers: impl Iterator<Item = &'a DenseLayer>) -> Vec<&'a [f64]> {
    layers
        .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
        .collect()
}

pub(crate) fn layer_tensors_mut<'a>(
    layers: impl Iterator<Item = &'a mut DenseLayer>,
) -> Vec<&'a mut [f64]> {
    layers
        .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
        .collect()
}

impl Trainable for GluMarkerNet {
    fn zeros_like(&self) -> Self {
        GluMarkerNet::zeros_like(self)
    }

    fn accumulate_gradient(&self, example: &Example, grad: &mut Self) -> Result<f64> {
        let (probs, cache) = self.forward(&example.f_c, &example.f_d)?;
        self.backward_into(&cache, example.label, grad);
        Ok(cross_entropy(&probs, example.label))
    }

    fn probabilities(&self, example: &Example) -> Result<Probs> {
        self.predict_proba(&example.f_c, &example.f_d)
    }

    fn tensors(&self) -> Vec<&[f64]> {
        layer_tensors(self.layers())
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        layer_tensors_mut(self.layers_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn small_arch() -> GluMarkerArch {
        GluMarkerArch {
            continuous_hidden: vec![5, 4],
            discrete_hidden: vec![6, 5, 4],
        }
    }

    fn random_input(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        let net = GluMarkerNet::zeros(&GluMarkerArch::default(), 14, 70).unwrap();
        let (p, cache) = net.forward(&[0.3; 14], &[1.0; 70]).unwrap();
        for pi in p {
            assert!((pi - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(cache.gate.iter().all(|&g| g == 0.5));
    }

    #[test]
    fn saturated_gate_passes_continuous_branch() {
        let mut net = GluMarkerNet::new(&small_arch(), 3, 7, 11).unwrap();
        net.gate.weights.iter_mut().for_each(|w| *w = 0.0);
        net.gate.biases.iter_mut().for_each(|b| *b = 50.0);
        let mut rng = seeded_rng(2);
        let (_, cache) = net
            .forward(&random_input(&mut rng, 3), &random_input(&mut rng, 7))
            .unwrap();
        for (f, c) in cache.fused.iter().zip(cache.r_c()) {
            assert!((f - c).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = GluMarkerNet::new(&small_arch(), 3, 7, 1).unwrap();
        assert!(net.forward(&[0.0; 4], &[0.0; 7]).is_err());
        assert!(net.forward(&[0.0; 3], &[0.0; 6]).is_err());
    }

    #[test]
    fn arch_validation() {
        let bad = GluMarkerArch {
            continuous_hidden: vec![8],
            discrete_hidden: vec![4],
        };
        assert!(GluMarkerNet::new(&bad, 3, 3, 0).is_err());
        let empty = GluMarkerArch {
            continuous_hidden: vec![],
            discrete_hidden: vec![4],
        };
        assert!(empty.validate().is_err());
        let zero = GluMarkerArch {
            continuous_hidden: vec![0, 4],
            discrete_hidden: vec![4],
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[1.0 / 3.0; 3], ControlLabel::Moderate) - 3f64.ln()).abs() < 1e-12);
        let eps = 1e-9;
        assert!(cross_entropy(&[1.0 - 2.0 * eps, eps, eps], ControlLabel::Good) < 1e-8);
        assert!(
            (cross_entropy(&[0.2, 0.5, 0.3], ControlLabel::Moderate) - 0.5f64.ln().abs()).abs()
                < 1e-12
        );
        let clamped = cross_entropy(&[1.0, 0.0, 0.0], ControlLabel::Poor);
        assert!(clamped.is_finite());
        assert!((clamped - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn output_bias_gradient_is_probs_minus_onehot() {
        let net = GluMarkerNet::zeros(&small_arch(), 3, 7).unwrap();
        for label in ControlLabel::ALL {
            let (p, cache) = net
                .forward(&[1.0, -2.0, 0.5], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
                .unwrap();
            let g = net.backward(&cache, label);
            for k in 0..3 {
                let onehot = if k == label.index() { 1.0 } else { 0.0 };
                assert!((g.output.biases[k] - (p[k] - onehot)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn duplicate_example_doubles_gradient() {
        let net = GluMarkerNet::new(&small_arch(), 3, 7, 4).unwrap();
        let ex = Example {
            f_c: vec![0.1, -0.4, 1.2],
            f_d: vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            label: ControlLabel::Poor,
            patient_id: "p".into(),
            target_day: 3,
        };
        let mut once = net.zeros_like();
        net.accumulate_gradient(&ex, &mut once).unwrap();
        let mut twice = net.zeros_like();
        net.accumulate_gradient(&ex, &mut twice).unwrap();
        net.accumulate_gradient(&ex, &mut twice).unwrap();
        for (a, b) in Trainable::tensors(&once)
            .iter()
            .zip(Trainable::tensors(&twice))
        {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(99);
        for trial in 0..100 {
            let mut net = GluMarkerNet::new(&small_arch(), 3, 7, trial).unwrap();
            // Nonzero biases keep dead layers from sitting exactly on the ReLU kink.
            for t in Trainable::tensors_mut(&mut net) {
                for v in t.iter_mut().filter(|v| **v == 0.0) {
                    *v = 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
            }
            let f_c = random_input(&mut rng, 3);
            let f_d = random_input(&mut rng, 7);
            let label = ControlLabel::ALL[trial as usize % 3];
            let (_, cache) = net.forward(&f_c, &f_d).unwrap();
            let grad = net.backward(&cache, label);
            let analytic: Vec<f64> = Trainable::tensors(&grad).concat();
            let h = 1e-5;
            let mut probe = net.clone();
            let n = analytic.len();
            for idx in 0..n {
                let eval =
                    |p: &GluMarkerNet| cross_entropy(&p.predict_proba(&f_c, &f_d).unwrap(), label);
                let orig = probe_get(&probe, idx);
                probe_set(&mut probe, idx, orig + h);
                let up = eval(&probe);
                probe_set(&mut probe, idx, orig - h);
                let down = eval(&probe);
                probe_set(&mut probe, idx, orig);
                let numeric = (up - down) / (2.0 * h);
                let denom = analytic[idx].abs().max(numeric.abs()).max(1e-7);
                let rel = (analytic[idx] - numeric).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "trial {trial} param {idx}: {} vs {numeric}",
                    analytic[idx]
                );
            }
        }
    }

    fn probe_get(net: &GluMarkerNet, mut idx: usize) -> f64 {
        for t in Trainable::tensors(net) {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        unreachable!()
    }

    fn probe_set(net: &mut GluMarkerNet, mut idx: usize, v: f64) {
        for t in Trainable::tensors_mut(net) {
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn probabilities_form_a_simplex(seed in 0u64..10_000, scale in 0.1f64..3.0) {
                let net = GluMarkerNet::new(&small_arch(), 3, 7, seed).unwrap();
                let mut rng = seeded_rng(seed ^ 0xabc);
                let f_c: Vec<f64> = random_input(&mut rng, 3).iter().map(|v| v * scale).collect();
                let f_d = random_input(&mut rng, 7);
                let (p, cache) = net.forward(&f_c, &f_d).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
                prop_assert!(cache.gate.iter().all(|&g| g > 0.0 && g < 1.0));
            }

            #[test]
            fn extreme_inputs_stay_normalized(seed in 0u64..10_000, scale in 3.0f64..1e6) {
                // Large logits saturate to exactly 0 or 1 in f64, but never NaN.
                let net = GluMarkerNet::new(&small_arch(), 3, 7, seed).unwrap();
                let mut rng = seeded_rng(seed ^ 0xdef);
                let f_c: Vec<f64> = random_input(&mut rng, 3).iter().map(|v| v * scale).collect();
                let f_d = random_input(&mut rng, 7);
                let (p, cache) = net.forward(&f_c, &f_d).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().chain(&cache.gate).all(|&x| (0.0..=1.0).contains(&x)));
            }

            #[test]
            fn fusion_identity_when_branches_agree(seed in 0u64..10_000) {
                // Identical branch weights and inputs make r_c == r_d.
                let arch = GluMarkerArch { continuous_hidden: vec![4, 3], discrete_hidden: vec![4, 3] };
                let mut net = GluMarkerNet::new(&arch, 5, 5, seed).unwrap();
                net.branch_d = net.branch_c.clone();
                let mut rng = seeded_rng(seed);
                let x = random_input(&mut rng, 5);
                let (_, cache) = net.forward(&x, &x).unwrap();
                prop_assert_eq!(cache.r_c(), cache.r_d());
                for (f, c) in cache.fused.iter().zip(cache.r_c()) {
                    prop_assert!((f - c).abs() <= 1e-15 * c.abs().max(1.0));
                }
            }
        }
    }
}
