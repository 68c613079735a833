//! Small softmax classifiers with hand-written backprop.
//!
//! Parameters live in a [`LayeredVector`] with layers `fc{i}.weight`
//! (row-major, `out × in`) and `fc{i}.bias`, one pair per dense layer.
//! Hidden layers use ReLU with subgradient 0 at 0; the output layer feeds a
//! log-sum-exp cross-entropy.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::exec::Execution;
use crate::mechanism::LayeredVector;
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected input of dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter layout does not match the architecture")]
    ShapeMismatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("invalid optimizer setting: {0}")]
    BadOptimizer(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    LogisticRegression { dim: usize, classes: usize },
    Mlp { sizes: Vec<usize> },
}

impl Architecture {
    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        match self {
            Architecture::LogisticRegression { dim, classes } => vec![*dim, *classes],
            Architecture::Mlp { sizes } => sizes.clone(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes()[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes().last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn validate(&self) -> Result<()> {
        let s = self.sizes();
        if s.len() < 2 {
            return Err(ModelError::BadArchitecture(
                "need at least two layer sizes".into(),
            ));
        }
        if s.contains(&0) {
            return Err(ModelError::BadArchitecture(
                "layer sizes must be positive".into(),
            ));
        }
        if *s.last().unwrap() < 2 {
            return Err(ModelError::BadArchitecture(
                "need at least two classes".into(),
            ));
        }
        Ok(())
    }
}

/// One labelled input.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: LayeredVector,
}

fn layer_names(i: usize) -> (String, String) {
    (format!("fc{i}.weight"), format!("fc{i}.bias"))
}

impl Model {
    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero
    /// biases.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        for (i, w) in arch.sizes().windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let (wn, bn) = layer_names(i);
            layers.push((wn, weights));
            layers.push((bn, vec![0.0; fan_out]));
        }
        let params = LayeredVector::new(layers).expect("generated names are unique");
        Ok(Self { arch, params })
    }

    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        for (i, w) in arch.sizes().windows(2).enumerate() {
            let (wn, bn) = layer_names(i);
            layers.push((wn, vec![0.0; w[0] * w[1]]));
            layers.push((bn, vec![0.0; w[1]]));
        }
        let params = LayeredVector::new(layers).expect("generated names are unique");
        Ok(Self { arch, params })
    }

    pub fn with_params(arch: Architecture, params: LayeredVector) -> Result<Self> {
        arch.validate()?;
        let template = Self::zeros(arch.clone())?;
        if template.params.layout() != params.layout() {
            return Err(ModelError::ShapeMismatch);
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &LayeredVector {
        &self.params
    }

    pub fn set_params(&mut self, params: LayeredVector) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(ModelError::ShapeMismatch);
        }
        self.params = params;
        Ok(())
    }

    fn check(&self, ex: &Example) -> Result<()> {
        let dim = self.arch.input_dim();
        if ex.features.len() != dim {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                actual: ex.features.len(),
            });
        }
        let classes = self.arch.classes();
        if ex.label >= classes {
            return Err(ModelError::LabelOutOfRange {
                label: ex.label,
                classes,
            });
        }
        Ok(())
    }

    /// Activations of every layer; the last entry is the logits.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let sizes = self.arch.sizes();
        let n_layers = sizes.len() - 1;
        let mut acts = Vec::with_capacity(sizes.len());
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let w = self.params.layer(2 * l);
            let b = self.params.layer(2 * l + 1);
            let input = &acts[l];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.arch.input_dim(),
                actual: x.len(),
            });
        }
        Ok(self.forward_all(x).pop().expect("at least one layer"))
    }

    /// Cross-entropy of one example.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        self.check(ex)?;
        let logits = self.forward_all(ex.features).pop().unwrap();
        Ok(log_sum_exp(&logits) - logits[ex.label])
    }

    /// Backprop for one example, accumulating `scale * grad` into `acc`.
    fn accumulate_gradient(&self, ex: &Example, scale: f64, acc: &mut LayeredVector) {
        let sizes = self.arch.sizes();
        let n_layers = sizes.len() - 1;
        let acts = self.forward_all(ex.features);

        // dL/dlogits = softmax - onehot
        let logits = &acts[n_layers];
        let lse = log_sum_exp(logits);
        let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        delta[ex.label] -= 1.0;

        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let input = &acts[l];
            {
                let gw = acc.layer_mut(2 * l);
                for o in 0..fan_out {
                    let d = scale * delta[o];
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            {
                let gb = acc.layer_mut(2 * l + 1);
                for (g, d) in gb.iter_mut().zip(&delta) {
                    *g += scale * d;
                }
            }
            if l > 0 {
                let w = self.params.layer(2 * l);
                delta = (0..fan_in)
                    .map(|i| {
                        if input[i] > 0.0 {
                            (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
    }

    /// Gradient of one example's loss.
    pub fn gradient(&self, ex: &Example) -> Result<LayeredVector> {
        self.check(ex)?;
        let mut g = self.params.zeros_like();
        self.accumulate_gradient(ex, 1.0, &mut g);
        Ok(g)
    }

    /// One independent gradient per example, in batch order.
    pub fn per_example_gradients(
        &self,
        batch: &[Example],
        exec: Execution,
    ) -> Result<Vec<LayeredVector>> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for ex in batch {
            self.check(ex)?;
        }
        Ok(exec.map(batch, |ex| {
            let mut g = self.params.zeros_like();
            self.accumulate_gradient(ex, 1.0, &mut g);
            g
        }))
    }

    /// Gradient of the mean loss over `batch`, accumulated in a single
    /// buffer.
    pub fn batch_gradient(&self, batch: &[Example]) -> Result<LayeredVector> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut g = self.params.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        for ex in batch {
            self.check(ex)?;
            self.accumulate_gradient(ex, scale, &mut g);
        }
        Ok(g)
    }

    /// Mean cross-entropy and top-1 accuracy.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for ex in data.examples() {
            self.check(&ex)?;
            let logits = self.forward_all(ex.features).pop().unwrap();
            loss += log_sum_exp(&logits) - logits[ex.label];
            if argmax(&logits) == ex.label {
                correct += 1;
            }
        }
        let n = data.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the first maximum.
fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    AdaGrad {
        learning_rate: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { learning_rate }
            | OptimizerConfig::Adam { learning_rate, .. }
            | OptimizerConfig::AdaGrad { learning_rate, .. } => learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(ModelError::BadOptimizer(format!("learning rate {lr}")));
        }
        if let OptimizerConfig::Adam { beta1, beta2, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(ModelError::BadOptimizer("betas must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum RuleState {
    Sgd,
    Adam {
        m: LayeredVector,
        v: LayeredVector,
        t: i32,
    },
    AdaGrad {
        acc: LayeredVector,
    },
}

/// Update rule plus its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    state: RuleState,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &LayeredVector) -> Result<Self> {
        config.validate()?;
        let state = match config {
            OptimizerConfig::Sgd { .. } => RuleState::Sgd,
            OptimizerConfig::Adam { .. } => RuleState::Adam {
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
            OptimizerConfig::AdaGrad { .. } => RuleState::AdaGrad {
                acc: params.zeros_like(),
            },
        };
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Squared-gradient accumulator, for AdaGrad.
    pub fn accumulator(&self) -> Option<&LayeredVector> {
        match &self.state {
            RuleState::AdaGrad { acc } => Some(acc),
            _ => None,
        }
    }

    /// Descends `params` along `grad` in place.
    pub fn apply_update(&mut self, params: &mut LayeredVector, grad: &LayeredVector) -> Result<()> {
        if !params.same_layout(grad) {
            return Err(ModelError::ShapeMismatch);
        }
        match (&mut self.state, self.config) {
            (RuleState::Sgd, OptimizerConfig::Sgd { learning_rate }) => {
                for (p, g) in params.iter_values_mut().zip(grad.iter_values()) {
                    *p -= learning_rate * g;
                }
            }
            (
                RuleState::Adam { m, v, t },
                OptimizerConfig::Adam {
                    learning_rate,
                    beta1,
                    beta2,
                    eps,
                },
            ) => {
                if !m.same_layout(params) {
                    return Err(ModelError::ShapeMismatch);
                }
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for (((p, g), mi), vi) in params
                    .iter_values_mut()
                    .zip(grad.iter_values())
                    .zip(m.iter_values_mut())
                    .zip(v.iter_values_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
            (RuleState::AdaGrad { acc }, OptimizerConfig::AdaGrad { learning_rate, eps }) => {
                if !acc.same_layout(params) {
                    return Err(ModelError::ShapeMismatch);
                }
                for ((p, g), a) in params
                    .iter_values_mut()
                    .zip(grad.iter_values())
                    .zip(acc.iter_values_mut())
                {
                    *a += g * g;
                    *p -= learning_rate * g / (a.sqrt() + eps);
                }
            }
            _ => unreachable!("state always matches config"),
        }
        Ok(())
    }
}
