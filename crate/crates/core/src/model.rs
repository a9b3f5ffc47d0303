//! The Rank-R feedforward classifier.
//!
//! Each hidden neuron `q` owns a weight tensor `W^(q)` that is never stored
//! densely: only its CP factors `W_1^(q) .. W_D^(q)` exist. The neuron's
//! preactivation `<W^(q), X>` is evaluated through one mode at a time as
//! `trace(W_d^T Z_{≠d})`, where `Z_{≠d} = X_(d) (W_D ⊙ .. ⊙ W_1 without W_d)`.
//! The activation is applied to that scalar, and a softmax over `V^T u`
//! gives class probabilities. There are no bias terms.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::tensor::{CpFactors, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape {actual:?} does not match model input shape {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("input contains non-finite entries")]
    NonFiniteInput,
    #[error("hidden neuron {index} out of range (model has {hidden})")]
    NeuronOutOfRange { index: usize, hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if s >= 0.0 {
                    1.0 / (1.0 + (-s).exp())
                } else {
                    let e = s.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => s.tanh(),
            Activation::Relu => s.max(0.0),
        }
    }

    /// Derivative at preactivation `s`; relu uses 0 at the kink.
    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let y = self.apply(s);
                y * (1.0 - y)
            }
            Activation::Tanh => {
                let y = s.tanh();
                1.0 - y * y
            }
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_shape: Vec<usize>,
    pub rank: usize,
    pub hidden: usize,
    pub classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_shape.len() < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "input tensors need at least two modes, got shape {:?}",
                self.input_shape
            )));
        }
        if self.input_shape.contains(&0) {
            return Err(ModelError::InvalidConfig(format!(
                "input extents must be positive, got {:?}",
                self.input_shape
            )));
        }
        if self.rank == 0 {
            return Err(ModelError::InvalidConfig("rank must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(ModelError::InvalidConfig(
                "hidden layer needs at least one neuron".into(),
            ));
        }
        if self.classes < 2 {
            return Err(ModelError::InvalidConfig(
                "need at least two classes".into(),
            ));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.input_shape.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RankR,
    Fcfnn,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::RankR => "rank_r",
            Family::Fcfnn => "fcfnn",
        })
    }
}

/// Number of trainable weights: `R Q sum_d I_d + Q C` for the CP-constrained
/// network and `Q prod_d I_d + Q C` for the fully connected one.
pub fn param_count(cfg: &ModelConfig, family: Family) -> u64 {
    let q = cfg.hidden as u64;
    let c = cfg.classes as u64;
    let input = match family {
        Family::RankR => cfg.rank as u64 * cfg.input_shape.iter().map(|&i| i as u64).sum::<u64>(),
        Family::Fcfnn => cfg.input_shape.iter().map(|&i| i as u64).product::<u64>(),
    };
    q * input + q * c
}

/// Numerically safe softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `V^T u` for a `Q x C` output matrix.
pub(crate) fn output_logits(output: &Array2<f64>, hidden: &[f64]) -> Vec<f64> {
    let (q_count, classes) = output.dim();
    let mut logits = vec![0.0; classes];
    for q in 0..q_count {
        let u = hidden[q];
        for (k, z) in logits.iter_mut().enumerate() {
            *z += output[[q, k]] * u;
        }
    }
    logits
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRModel {
    config: ModelConfig,
    hidden: Vec<CpFactors>,
    output: Array2<f64>,
}

impl RankRModel {
    pub fn new(
        config: ModelConfig,
        hidden: Vec<CpFactors>,
        output: Array2<f64>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if hidden.len() != config.hidden {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} hidden neurons, got {}",
                config.hidden,
                hidden.len()
            )));
        }
        for (q, w) in hidden.iter().enumerate() {
            if w.shape() != config.input_shape || w.rank() != config.rank {
                return Err(ModelError::InvalidConfig(format!(
                    "neuron {q}: factors describe shape {:?} at rank {}, expected {:?} at rank {}",
                    w.shape(),
                    w.rank(),
                    config.input_shape,
                    config.rank
                )));
            }
        }
        if output.dim() != (config.hidden, config.classes) {
            return Err(ModelError::InvalidConfig(format!(
                "output weights are {:?}, expected ({}, {})",
                output.dim(),
                config.hidden,
                config.classes
            )));
        }
        Ok(Self {
            config,
            hidden,
            output,
        })
    }

    /// All weights zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let hidden = (0..config.hidden)
            .map(|_| CpFactors::zeros(&config.input_shape, config.rank))
            .collect::<Result<Vec<_>, _>>()?;
        let output = Array2::zeros((config.hidden, config.classes));
        Self::new(config, hidden, output)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hidden_weights(&self) -> &[CpFactors] {
        &self.hidden
    }

    pub fn hidden_weights_mut(&mut self) -> &mut [CpFactors] {
        &mut self.hidden
    }

    pub fn output_weights(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn output_weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.output
    }

    pub fn param_count(&self) -> u64 {
        param_count(&self.config, Family::RankR)
    }

    fn check_input(&self, x: &DenseTensor) -> Result<(), ModelError> {
        if x.shape() != self.config.input_shape.as_slice() {
            return Err(ModelError::InputShape {
                expected: self.config.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_neuron(&self, q: usize) -> Result<(), ModelError> {
        if q >= self.config.hidden {
            return Err(ModelError::NeuronOutOfRange {
                index: q,
                hidden: self.config.hidden,
            });
        }
        Ok(())
    }

    /// `Z_{≠d}^{(q)}` for input `x` (0-based `q` and `mode`), an `I_d x R`
    /// matrix that does not depend on `W_d^{(q)}`.
    pub fn z_excluding(
        &self,
        x: &DenseTensor,
        q: usize,
        mode: usize,
    ) -> Result<Array2<f64>, ModelError> {
        self.check_input(x)?;
        self.check_neuron(q)?;
        let order = self.config.order();
        if mode >= order {
            return Err(TensorError::ModeOutOfRange { mode, order }.into());
        }
        let chain = self.hidden[q].chain_excluding(Some(mode))?;
        if mode + 1 == order {
            Ok(x.last_mode_unfolding().dot(&chain))
        } else {
            Ok(x.matricize(mode)?.dot(&chain))
        }
    }

    /// `<W^(q), X>` evaluated through mode `mode` as `trace(W_d^T Z_{≠d})`.
    pub fn hidden_preactivation(
        &self,
        x: &DenseTensor,
        q: usize,
        mode: usize,
    ) -> Result<f64, ModelError> {
        let z = self.z_excluding(x, q, mode)?;
        Ok(trace_product(self.hidden[q].factor(mode), &z))
    }

    /// Preactivations of every hidden neuron, evaluated through the last mode.
    pub fn preactivations(&self, x: &DenseTensor) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        if !x.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let last = self.config.order() - 1;
        let unfolding = x.last_mode_unfolding();
        self.hidden
            .iter()
            .map(|w| {
                let chain = w.chain_excluding(Some(last))?;
                Ok(trace_product(w.factor(last), &unfolding.dot(&chain)))
            })
            .collect()
    }

    /// Class logits `V^T g(s)` from hidden preactivations `s`.
    pub fn logits_from_preactivations(&self, s: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = s.iter().map(|&v| self.config.activation.apply(v)).collect();
        output_logits(&self.output, &u)
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &DenseTensor) -> Result<Vec<f64>, ModelError> {
        let s = self.preactivations(x)?;
        Ok(softmax(&self.logits_from_preactivations(&s)))
    }

    /// Most probable class (0-based); ties go to the smallest index.
    pub fn predict(&self, x: &DenseTensor) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward(x)?))
    }
}

/// `trace(a^T b)` for equally sized matrices.
pub(crate) fn trace_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn config(shape: Vec<usize>, rank: usize, hidden: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_shape: shape,
            rank,
            hidden,
            classes,
            activation: Activation::Sigmoid,
            seed: 0,
        }
    }

    #[test]
    fn param_counts_for_pavia_shape() {
        let mut cfg = config(vec![5, 5, 103], 1, 75, 9);
        assert_eq!(param_count(&cfg, Family::RankR), 9150);
        assert_eq!(param_count(&cfg, Family::Fcfnn), 193_800);
        cfg.rank = 2;
        assert_eq!(param_count(&cfg, Family::RankR), 17_625);
    }

    #[test]
    fn order_one_inputs_are_rejected() {
        let cfg = config(vec![10], 1, 2, 2);
        assert!(matches!(
            RankRModel::zeros(cfg),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(config(vec![2, 2], 0, 1, 2).validate().is_err());
        assert!(config(vec![2, 2], 1, 0, 2).validate().is_err());
        assert!(config(vec![2, 2], 1, 1, 1).validate().is_err());
        assert!(config(vec![2, 0], 1, 1, 2).validate().is_err());
        assert!(config(vec![2, 2], 1, 1, 2).validate().is_ok());
    }

    #[test]
    fn zero_output_weights_give_uniform_probabilities() {
        let model = RankRModel::zeros(config(vec![2, 3], 2, 3, 4)).unwrap();
        let x = DenseTensor::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as f64).unwrap();
        let p = model.forward(&x).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(model.predict(&x).unwrap(), 0);
    }

    #[test]
    fn softmax_symmetry_and_argmax() {
        assert_eq!(softmax(&[3.0, 3.0]), vec![0.5, 0.5]);
        assert_eq!(argmax(&softmax(&[0.0, 10.0, -5.0])), 1);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
    }

    #[test]
    fn z_of_rank_one_all_ones() {
        let mut cfg = config(vec![2, 3], 1, 1, 2);
        cfg.activation = Activation::Tanh;
        let ones = CpFactors::new(vec![Array2::ones((2, 1)), Array2::ones((3, 1))]).unwrap();
        let model = RankRModel::new(cfg, vec![ones], Array2::zeros((1, 2))).unwrap();
        let x = DenseTensor::from_fn(vec![2, 3], |_| 1.0).unwrap();
        assert_eq!(model.z_excluding(&x, 0, 0).unwrap(), array![[3.0], [3.0]]);
        assert_eq!(model.hidden_preactivation(&x, 0, 1).unwrap(), 6.0);
    }

    #[test]
    fn zero_weights_give_zero_preactivation() {
        let model = RankRModel::zeros(config(vec![2, 3, 2], 2, 2, 2)).unwrap();
        let x = DenseTensor::from_fn(vec![2, 3, 2], |i| i.iter().sum::<usize>() as f64).unwrap();
        for d in 0..3 {
            assert_eq!(model.hidden_preactivation(&x, 1, d).unwrap(), 0.0);
        }
    }

    #[test]
    fn input_errors() {
        let model = RankRModel::zeros(config(vec![2, 3], 1, 1, 2)).unwrap();
        let wrong = DenseTensor::zeros(vec![3, 2]).unwrap();
        assert!(matches!(
            model.forward(&wrong),
            Err(ModelError::InputShape { .. })
        ));
        let mut bad = DenseTensor::zeros(vec![2, 3]).unwrap();
        bad.data_mut()[2] = f64::NAN;
        assert!(matches!(model.forward(&bad), Err(ModelError::NonFiniteInput)));
        let x = DenseTensor::zeros(vec![2, 3]).unwrap();
        assert!(matches!(
            model.z_excluding(&x, 0, 2),
            Err(ModelError::Tensor(TensorError::ModeOutOfRange { .. }))
        ));
        assert!(matches!(
            model.z_excluding(&x, 1, 0),
            Err(ModelError::NeuronOutOfRange { .. })
        ));
    }

    #[test]
    fn activation_derivatives() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(2.0), 1.0);
        assert_eq!(Activation::Sigmoid.derivative(0.0), 0.25);
        assert_eq!(Activation::Tanh.derivative(0.0), 1.0);
        for a in [Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
    }
}
