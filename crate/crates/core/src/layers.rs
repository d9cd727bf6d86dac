//! Fully connected and neuromodulated layers, and the context-conditioned
//! policy network built from them.
//!
//! A neuromodulated layer runs two pathways on the same input. The standard
//! pathway computes `h_s = W_s x + b_s`. The modulatory pathway computes
//! `g = relu(W_g x + b_g)` and projects it to one gate per output unit,
//! `h_m = tanh(W_m g + b_m)`. The layer output is `relu(h_s ⊙ h_m)`, or
//! `relu(h_s ⊙ sign(h_m))` in [`GateMode::Strict`].
//!
//! Parameter containers are generic over their storage: `Network<Array>` is
//! the thread-shareable parameter set, `Network<Tensor>` the per-pass view
//! living on a [`GradRecord`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Array, AutodiffError, GradRecord, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error("{layer}: expected input width {expected}, got shape {got:?}")]
    Dimension {
        layer: String,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Multiply by the full `tanh` modulation.
    #[default]
    Magnitude,
    /// Multiply by the sign of the modulation only (zero counts as positive).
    ///
    /// No gradient passes through the sign, so the modulatory weights of a
    /// strict layer never change under gradient training.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    #[default]
    Standard,
    Neuromodulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Head {
    Categorical { n_actions: usize },
    Gaussian { action_dim: usize },
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::Categorical { n_actions } => n_actions,
            Head::Gaussian { action_dim } => action_dim,
        }
    }
}

/// Architecture of a policy network.
///
/// The context vector is concatenated to the observation, so the first
/// hidden layer sees `input_dim + context_dim` features. Hidden layers are
/// all of `layer_kind`; the output layer is always a plain linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub input_dim: usize,
    pub context_dim: usize,
    pub hidden_sizes: Vec<usize>,
    /// Modulator width per hidden layer; ignored for standard layers.
    pub nm_sizes: Vec<usize>,
    pub layer_kind: LayerKind,
    pub gate_mode: GateMode,
    pub head: Head,
}

impl PolicySpec {
    pub fn validate(&self) -> Result<(), LayerError> {
        let bad = |msg: String| Err(LayerError::Config(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be at least 1".into());
        }
        if self.head.output_dim() == 0 {
            return bad("the action head needs at least one output".into());
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return bad(format!("hidden sizes must be positive: {:?}", self.hidden_sizes));
        }
        if self.layer_kind == LayerKind::Neuromodulated {
            if self.nm_sizes.len() != self.hidden_sizes.len() {
                return bad(format!(
                    "{} neuromodulator sizes given for {} hidden layers",
                    self.nm_sizes.len(),
                    self.hidden_sizes.len()
                ));
            }
            if self.nm_sizes.iter().any(|&n| n == 0) {
                return bad("neuromodulator sizes must be positive".into());
            }
        }
        Ok(())
    }

    /// Width of the first layer's input: observation plus context.
    pub fn network_input_dim(&self) -> usize {
        self.input_dim + self.context_dim
    }

    /// Exact number of network parameters (θ), including the Gaussian
    /// head's `log_std`. The context vector is not counted.
    pub fn param_count(&self) -> usize {
        let mut fan_in = self.network_input_dim();
        let mut total = 0;
        for (i, &width) in self.hidden_sizes.iter().enumerate() {
            total += match self.layer_kind {
                LayerKind::Standard => linear_param_count(fan_in, width),
                LayerKind::Neuromodulated => nm_param_count(fan_in, width, self.nm_sizes[i]),
            };
            fan_in = width;
        }
        total += linear_param_count(fan_in, self.head.output_dim());
        if let Head::Gaussian { action_dim } = self.head {
            total += action_dim;
        }
        total
    }

    /// A standard-layer spec whose hidden layers share one width, chosen so
    /// its parameter count is as close as possible to `target`.
    pub fn standard_matching(&self, target: usize) -> PolicySpec {
        let mut spec = PolicySpec {
            layer_kind: LayerKind::Standard,
            nm_sizes: Vec::new(),
            ..self.clone()
        };
        let layers = self.hidden_sizes.len().max(1);
        let mut best = (usize::MAX, 1);
        let mut width = 1;
        loop {
            spec.hidden_sizes = vec![width; layers];
            let count = spec.param_count();
            let gap = count.abs_diff(target);
            if gap < best.0 {
                best = (gap, width);
            }
            if count > target {
                break;
            }
            width += 1;
        }
        spec.hidden_sizes = vec![best.1; layers];
        spec
    }
}

pub fn linear_param_count(fan_in: usize, fan_out: usize) -> usize {
    fan_in * fan_out + fan_out
}

pub fn nm_param_count(fan_in: usize, fan_out: usize, nm: usize) -> usize {
    linear_param_count(fan_in, fan_out)
        + linear_param_count(fan_in, nm)
        + linear_param_count(nm, fan_out)
}

/// Affine map with `weight: [out × in]` and `bias: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmLinear<T> {
    /// `W_s`, `b_s`.
    pub standard: Linear<T>,
    /// `W_g`, `b_g`: input to modulators.
    pub modulator_in: Linear<T>,
    /// `W_m`, `b_m`: modulators to the standard units.
    pub modulator_out: Linear<T>,
    pub gate: GateMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Hidden<T> {
    Standard(Linear<T>),
    Neuromodulated(NmLinear<T>),
}

/// The network parameters θ of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub hidden: Vec<Hidden<T>>,
    pub output: Linear<T>,
    /// State-independent log standard deviation of a Gaussian head.
    pub log_std: Option<T>,
}

impl<T> Linear<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

impl<T> Network<T> {
    /// Converts every tensor, visiting them in [`Network::named`] order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Network<U> {
        let hidden = self
            .hidden
            .iter()
            .map(|h| match h {
                Hidden::Standard(l) => Hidden::Standard(l.map(&mut f)),
                Hidden::Neuromodulated(nm) => Hidden::Neuromodulated(NmLinear {
                    standard: nm.standard.map(&mut f),
                    modulator_in: nm.modulator_in.map(&mut f),
                    modulator_out: nm.modulator_out.map(&mut f),
                    gate: nm.gate,
                }),
            })
            .collect();
        let output = self.output.map(&mut f);
        let log_std = self.log_std.as_ref().map(&mut f);
        Network {
            hidden,
            output,
            log_std,
        }
    }

    /// All tensors with their archive names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (i, h) in self.hidden.iter().enumerate() {
            match h {
                Hidden::Standard(l) => l.visit(&format!("layer{i}.standard"), &mut out),
                Hidden::Neuromodulated(nm) => {
                    nm.standard.visit(&format!("layer{i}.standard"), &mut out);
                    nm.modulator_in.visit(&format!("layer{i}.modulator_in"), &mut out);
                    nm.modulator_out.visit(&format!("layer{i}.modulator_out"), &mut out);
                }
            }
        }
        self.output.visit("output", &mut out);
        if let Some(s) = &self.log_std {
            out.push(("log_std".into(), s));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Rebuilds a network of the same structure from values listed in
    /// [`Network::named`] order.
    pub fn with_values<U>(&self, values: Vec<U>) -> Network<U> {
        let expected = self.named().len();
        assert_eq!(values.len(), expected, "one value per network tensor");
        let mut it = values.into_iter();
        self.map(|_| it.next().expect("length checked"))
    }
}

fn uniform_array(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}

fn init_linear(fan_in: usize, fan_out: usize, zero_bias: bool, rng: &mut impl Rng) -> Linear<Array> {
    // Kaiming-uniform bound for ReLU units, √(6 / fan_in).
    let bound = (6.0 / fan_in as f64).sqrt();
    let weight = uniform_array(&[fan_out, fan_in], bound, rng);
    let bias = if zero_bias {
        Array::zeros(&[fan_out])
    } else {
        uniform_array(&[fan_out], bound, rng)
    };
    Linear { weight, bias }
}

impl Network<Array> {
    /// Fan-in scaled uniform initialisation. The modulator output bias
    /// starts at zero; its weights do not.
    pub fn init(spec: &PolicySpec, rng: &mut impl Rng) -> Result<Self, LayerError> {
        spec.validate()?;
        let mut fan_in = spec.network_input_dim();
        let mut hidden = Vec::with_capacity(spec.hidden_sizes.len());
        for (i, &width) in spec.hidden_sizes.iter().enumerate() {
            hidden.push(match spec.layer_kind {
                LayerKind::Standard => Hidden::Standard(init_linear(fan_in, width, false, rng)),
                LayerKind::Neuromodulated => {
                    let nm = spec.nm_sizes[i];
                    Hidden::Neuromodulated(NmLinear {
                        standard: init_linear(fan_in, width, false, rng),
                        modulator_in: init_linear(fan_in, nm, false, rng),
                        modulator_out: init_linear(nm, width, true, rng),
                        gate: spec.gate_mode,
                    })
                }
            });
            fan_in = width;
        }
        let output = init_linear(fan_in, spec.head.output_dim(), false, rng);
        let log_std = match spec.head {
            Head::Gaussian { action_dim } => Some(Array::zeros(&[action_dim])),
            Head::Categorical { .. } => None,
        };
        Ok(Network {
            hidden,
            output,
            log_std,
        })
    }

    /// Untracked tensors for inference.
    pub fn constants(&self) -> Network<Tensor> {
        self.map(|a| Tensor::constant(a.clone()))
    }

    /// Differentiable leaves on `record`.
    pub fn vars(&self, record: &GradRecord) -> Network<Tensor> {
        self.map(|a| record.var(a.clone()))
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|a| a.len()).sum()
    }
}

fn check_width(layer: &str, x: &Tensor, expected: usize) -> Result<usize, LayerError> {
    match x.shape() {
        [rows, cols] if *cols == expected => Ok(*rows),
        got => Err(LayerError::Dimension {
            layer: layer.to_string(),
            expected,
            got: got.to_vec(),
        }),
    }
}

/// `x · Wᵀ + b` for a `batch × in` input.
pub fn linear_forward(x: &Tensor, p: &Linear<Tensor>) -> Result<Tensor, LayerError> {
    let out = p.weight.shape()[0];
    let rows = check_width("linear", x, p.weight.shape()[1])?;
    let pre = x.matmul_t(&p.weight, false, true)?;
    let bias = p.bias.reshape(&[1, out])?.broadcast_to(&[rows, out])?;
    Ok(pre.add(&bias)?)
}

/// Forward pass of a neuromodulated layer, output non-linearity included.
pub fn nm_forward(x: &Tensor, p: &NmLinear<Tensor>) -> Result<Tensor, LayerError> {
    check_width("neuromodulated layer", x, p.standard.weight.shape()[1])?;
    let h_s = linear_forward(x, &p.standard)?;
    let g = linear_forward(x, &p.modulator_in)?.relu();
    let h_m = linear_forward(&g, &p.modulator_out)?.tanh();
    let gate = match p.gate {
        GateMode::Magnitude => h_m,
        GateMode::Strict => h_m.sign_gate(),
    };
    Ok(h_s.mul(&gate)?.relu())
}

/// One action per batch row.
#[derive(Debug, Clone, PartialEq)]
pub enum Actions {
    Discrete(Vec<usize>),
    /// `batch × action_dim`.
    Continuous(Array),
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Discrete(a) => a.len(),
            Actions::Continuous(a) => a.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The action distribution a policy produces for a batch of observations.
#[derive(Debug, Clone)]
pub enum ActionDistribution {
    Categorical { logits: Tensor },
    Gaussian { mean: Tensor, log_std: Tensor },
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl ActionDistribution {
    /// Log-probability of each row's action, as a `[batch]` tensor.
    pub fn log_prob(&self, actions: &Actions) -> Result<Tensor, LayerError> {
        match (self, actions) {
            (ActionDistribution::Categorical { logits }, Actions::Discrete(a)) => {
                Ok(logits.log_softmax_rows()?.gather_rows(a)?)
            }
            (ActionDistribution::Gaussian { mean, log_std }, Actions::Continuous(a)) => {
                let shape = mean.shape().to_vec();
                if a.shape() != shape.as_slice() {
                    return Err(LayerError::Dimension {
                        layer: "gaussian head".into(),
                        expected: shape[1],
                        got: a.shape().to_vec(),
                    });
                }
                let (rows, dim) = (shape[0], shape[1]);
                let log_std = log_std.reshape(&[1, dim])?.broadcast_to(&shape)?;
                let z = Tensor::constant(a.clone())
                    .sub(mean)?
                    .mul(&log_std.neg().exp())?;
                let per_dim = z.square().scale(-0.5).sub(&log_std)?.add_scalar(-0.5 * LN_2PI);
                Ok(per_dim.sum_to(&[rows, 1])?.reshape(&[rows])?)
            }
            _ => Err(LayerError::Config(
                "action type does not match the policy head".into(),
            )),
        }
    }

    /// Draws one action per row, or takes the mode when `greedy`.
    pub fn sample(&self, rng: &mut impl Rng, greedy: bool) -> Actions {
        match self {
            ActionDistribution::Categorical { logits } => {
                let v = logits.value();
                let (rows, cols) = v.dims2().expect("logits are a matrix");
                let picks = (0..rows)
                    .map(|r| {
                        let row = &v.data()[r * cols..(r + 1) * cols];
                        if greedy {
                            return argmax(row);
                        }
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let weights: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
                        let total: f64 = weights.iter().sum();
                        let mut u = rng.random::<f64>() * total;
                        for (i, w) in weights.iter().enumerate() {
                            if u < *w {
                                return i;
                            }
                            u -= w;
                        }
                        cols - 1
                    })
                    .collect();
                Actions::Discrete(picks)
            }
            ActionDistribution::Gaussian { mean, log_std } => {
                let std: Vec<f64> = log_std.value().data().iter().map(|s| s.exp()).collect();
                let m = mean.value();
                let dim = std.len();
                let data = m
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &mu)| {
                        if greedy {
                            mu
                        } else {
                            let eps: f64 = StandardNormal.sample(rng);
                            mu + std[i % dim] * eps
                        }
                    })
                    .collect();
                Actions::Continuous(Array::new(m.shape().to_vec(), data).expect("same shape"))
            }
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Output of a forward pass that also exposes hidden activations.
pub struct PolicyOutput {
    pub dist: ActionDistribution,
    /// Post-nonlinearity output of each hidden layer, `batch × width`.
    pub hidden: Vec<Tensor>,
}

/// Runs the policy on `obs: [batch × input_dim]` with context `phi: [context_dim]`.
pub fn policy_forward(
    obs: &Tensor,
    phi: &Tensor,
    net: &Network<Tensor>,
    spec: &PolicySpec,
) -> Result<PolicyOutput, LayerError> {
    if phi.shape() != [spec.context_dim] {
        return Err(LayerError::Config(format!(
            "context has shape {:?}, spec expects [{}]",
            phi.shape(),
            spec.context_dim
        )));
    }
    if net.hidden.len() != spec.hidden_sizes.len() {
        return Err(LayerError::Config(format!(
            "network has {} hidden layers, spec declares {}",
            net.hidden.len(),
            spec.hidden_sizes.len()
        )));
    }
    let rows = check_width("policy input", obs, spec.input_dim)?;
    let mut x = if spec.context_dim == 0 {
        obs.clone()
    } else {
        let ctx = phi
            .reshape(&[1, spec.context_dim])?
            .broadcast_to(&[rows, spec.context_dim])?;
        obs.concat_cols(&ctx)?
    };
    let mut hidden = Vec::with_capacity(net.hidden.len());
    for layer in &net.hidden {
        x = match layer {
            Hidden::Standard(l) => linear_forward(&x, l)?.relu(),
            Hidden::Neuromodulated(nm) => nm_forward(&x, nm)?,
        };
        hidden.push(x.clone());
    }
    let out = linear_forward(&x, &net.output)?;
    let dist = match (spec.head, &net.log_std) {
        (Head::Categorical { .. }, _) => ActionDistribution::Categorical { logits: out },
        (Head::Gaussian { .. }, Some(log_std)) => ActionDistribution::Gaussian {
            mean: out,
            log_std: log_std.clone(),
        },
        (Head::Gaussian { .. }, None) => {
            return Err(LayerError::Config("Gaussian head without log_std".into()))
        }
    };
    Ok(PolicyOutput { dist, hidden })
}

/// The network parameters θ together with the context parameters φ.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub theta: Network<Array>,
    pub phi: Array,
}

impl PolicyParams {
    /// Fresh θ with φ at its per-task reset value of zero.
    pub fn init(spec: &PolicySpec, rng: &mut impl Rng) -> Result<Self, LayerError> {
        Ok(Self {
            theta: Network::init(spec, rng)?,
            phi: Array::zeros(&[spec.context_dim]),
        })
    }

    pub fn with_phi(&self, phi: Array) -> Self {
        Self {
            theta: self.theta.clone(),
            phi,
        }
    }
}
