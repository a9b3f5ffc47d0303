//! Fully connected baseline and its exact conversion into a Rank-R network.
//!
//! Any weight vector `w` over `p_1 x .. x p_D` inputs is a sum of at most
//! `min_i prod_{d≠i} p_d` rank-1 terms: pick the mode `i` with the smallest
//! complementary product, and write `ten(w)` as one term per multi-index of
//! the other modes, pairing that mode-`i` fiber with unit vectors. The
//! conversion copies values only, so the reconstructed tensors equal the
//! source rows bit for bit.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{output_logits, softmax, Activation, ModelConfig, ModelError, RankRModel};
use crate::tensor::{advance, CpFactors, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquivalenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input has {actual} entries, network expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("rank bound needs at least two modes, got shape {0:?}")]
    OrderTooLow(Vec<usize>),
    #[error("invalid network: {0}")]
    Invalid(String),
}

/// Two-layer fully connected network on vectorised inputs. Row `q` of
/// `hidden` is the weight vector of neuron `q`; `output` is `Q x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fcfnn {
    hidden: Array2<f64>,
    output: Array2<f64>,
    activation: Activation,
}

impl Fcfnn {
    pub fn new(
        hidden: Array2<f64>,
        output: Array2<f64>,
        activation: Activation,
    ) -> Result<Self, EquivalenceError> {
        if hidden.nrows() == 0 || hidden.ncols() == 0 {
            return Err(EquivalenceError::Invalid("empty hidden layer".into()));
        }
        if output.nrows() != hidden.nrows() {
            return Err(EquivalenceError::Invalid(format!(
                "output weights have {} rows for {} hidden neurons",
                output.nrows(),
                hidden.nrows()
            )));
        }
        if output.ncols() < 2 {
            return Err(EquivalenceError::Invalid("need at least two classes".into()));
        }
        if !hidden.iter().chain(output.iter()).all(|x| x.is_finite()) {
            return Err(EquivalenceError::Invalid("non-finite weight".into()));
        }
        Ok(Self {
            hidden,
            output,
            activation,
        })
    }

    /// Weights uniform in `[-1, 1]`.
    pub fn random(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self, EquivalenceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_simple_fn((hidden, input_dim), || rng.random_range(-1.0..=1.0));
        let v = Array2::from_shape_simple_fn((hidden, classes), || rng.random_range(-1.0..=1.0));
        Self::new(w, v, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.ncols()
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn classes(&self) -> usize {
        self.output.ncols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn hidden_weights(&self) -> &Array2<f64> {
        &self.hidden
    }

    pub fn output_weights(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn param_count(&self) -> u64 {
        (self.hidden.len() + self.output.len()) as u64
    }

    /// `g(W vec(x))`, one preactivation per hidden neuron before `g`.
    pub fn preactivations(&self, x: &DenseTensor) -> Result<Vec<f64>, EquivalenceError> {
        if x.len() != self.input_dim() {
            return Err(EquivalenceError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(self
            .hidden
            .rows()
            .into_iter()
            .map(|w| w.iter().zip(x.data()).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Class probabilities `softmax(V^T g(W vec(x)))`.
pub fn fcfnn_forward(x: &DenseTensor, f: &Fcfnn) -> Result<Vec<f64>, EquivalenceError> {
    let u: Vec<f64> = f
        .preactivations(x)?
        .into_iter()
        .map(|s| f.activation.apply(s))
        .collect();
    Ok(softmax(&output_logits(&f.output, &u)))
}

/// Mode attaining `min_i prod_{d≠i} p_d` (smallest index on ties) and that
/// product.
fn minimizing_mode(shape: &[usize]) -> Result<(usize, usize), EquivalenceError> {
    if shape.len() < 2 {
        return Err(EquivalenceError::OrderTooLow(shape.to_vec()));
    }
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()).into());
    }
    let mut best = (0, usize::MAX);
    for i in 0..shape.len() {
        let p: usize = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != i)
            .map(|(_, &p)| p)
            .product();
        if p < best.1 {
            best = (i, p);
        }
    }
    Ok(best)
}

/// `min_i prod_{d≠i} p_d`, a rank every tensor of this shape can be written in.
pub fn rank_upper_bound(shape: &[usize]) -> Result<usize, EquivalenceError> {
    Ok(minimizing_mode(shape)?.1)
}

/// CP factors of rank [`rank_upper_bound`] reconstructing `ten(w, shape)`.
pub fn decompose_exact(w: &[f64], shape: &[usize]) -> Result<CpFactors, EquivalenceError> {
    let (mode, rank) = minimizing_mode(shape)?;
    let t = DenseTensor::ten(w, shape)?;
    let unfolding = t.matricize(mode)?;
    let mut factors: Vec<Array2<f64>> = shape.iter().map(|&p| Array2::zeros((p, rank))).collect();
    factors[mode].assign(&unfolding);
    // columns of the unfolding follow the remaining modes, lowest fastest
    let others: Vec<usize> = (0..shape.len()).filter(|&d| d != mode).collect();
    let other_shape: Vec<usize> = others.iter().map(|&d| shape[d]).collect();
    let mut idx = vec![0usize; others.len()];
    for r in 0..rank {
        for (k, &d) in others.iter().enumerate() {
            factors[d][[idx[k], r]] = 1.0;
        }
        advance(&mut idx, &other_shape);
    }
    Ok(CpFactors::new(factors)?)
}

/// Builds a Rank-R network computing exactly the same function as `f` on
/// inputs of the given shape.
pub fn fcfnn_to_rankr(f: &Fcfnn, shape: &[usize]) -> Result<RankRModel, EquivalenceError> {
    let size: usize = shape.iter().product();
    if size != f.input_dim() {
        return Err(EquivalenceError::DimensionMismatch {
            expected: f.input_dim(),
            actual: size,
        });
    }
    let rank = rank_upper_bound(shape)?;
    let hidden = f
        .hidden
        .rows()
        .into_iter()
        .map(|w| decompose_exact(&w.to_vec(), shape))
        .collect::<Result<Vec<_>, _>>()?;
    let config = ModelConfig {
        input_shape: shape.to_vec(),
        rank,
        hidden: f.hidden_count(),
        classes: f.classes(),
        activation: f.activation,
        seed: 0,
    };
    Ok(RankRModel::new(config, hidden, f.output.clone())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub max_abs_gap: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Evaluates both networks on `trials` random inputs uniform in `[-1, 1]`
/// and reports the largest absolute difference of any class probability.
pub fn verify_equivalence(
    f: &Fcfnn,
    m: &RankRModel,
    trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<EquivalenceReport, EquivalenceError> {
    let shape = m.config().input_shape.clone();
    let size: usize = shape.iter().product();
    if size != f.input_dim() || m.config().classes != f.classes() {
        return Err(EquivalenceError::DimensionMismatch {
            expected: f.input_dim(),
            actual: size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_gap: f64 = 0.0;
    for _ in 0..trials {
        let x = DenseTensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..=1.0))?;
        let a = fcfnn_forward(&x, f)?;
        let b = m.forward(&x)?;
        for (p, q) in a.iter().zip(&b) {
            max_abs_gap = max_abs_gap.max((p - q).abs());
        }
    }
    Ok(EquivalenceReport {
        trials,
        max_abs_gap,
        threshold,
        pass: max_abs_gap <= threshold,
    })
}
