//! Negative log-likelihood, its gradients and the alternating
//! coordinate-descent trainer.
//!
//! Given the factors of every other mode, neuron `q`'s preactivation is
//! linear in `W_d^(q)`: `s_q = trace(W_d^T Z_{≠d})`. The factor gradient is
//! therefore `sum_i δ_{i,q} Z_{≠d}(X_i)` with
//! `δ_{i,q} = g'(s_{i,q}) sum_k (p_i^k - t_{i,k}) V[q,k]`, and the output
//! gradient is `sum_i u_i (p_i - t_i)^T`.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledPatchSet;
use crate::model::{argmax, output_logits, softmax, trace_product, ModelConfig, ModelError, RankRModel};
use crate::tensor::{CpFactors, DenseTensor, TensorError};

/// Probabilities are clamped to this value before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("data has {data} classes but the model predicts {model}")]
    ClassMismatch { data: usize, model: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One factor matrix at a time, in mode-then-neuron order, then `V`.
    #[default]
    Alternating,
    /// Every parameter steps at once from a single gradient evaluation.
    Joint,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Alternating => "alternating",
            TrainMode::Joint => "joint",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alternating" => Ok(TrainMode::Alternating),
            "joint" => Ok(TrainMode::Joint),
            other => Err(TrainError::InvalidConfig(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the absolute change of the training loss between two
    /// consecutive epochs drops below this value.
    pub tol: f64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_epochs: 50,
            tol: 1e-6,
            mode: TrainMode::Alternating,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "tolerance must be non-negative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochStats>,
    pub elapsed: Duration,
}

impl RunRecord {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Receives the statistics of every completed epoch.
pub trait EpochObserver {
    fn on_epoch(&mut self, stats: &EpochStats);
}

impl<F: FnMut(&EpochStats)> EpochObserver for F {
    fn on_epoch(&mut self, stats: &EpochStats) {
        self(stats)
    }
}

fn check_data(model: &RankRModel, data: &LabeledPatchSet) -> Result<(), TrainError> {
    let cfg = model.config();
    if data.classes() != cfg.classes {
        return Err(TrainError::ClassMismatch {
            data: data.classes(),
            model: cfg.classes,
        });
    }
    if let Some(shape) = data.patch_shape() {
        if shape != cfg.input_shape.as_slice() {
            return Err(ModelError::InputShape {
                expected: cfg.input_shape.clone(),
                actual: shape.to_vec(),
            }
            .into());
        }
    }
    Ok(())
}

fn all_preactivations(
    model: &RankRModel,
    data: &LabeledPatchSet,
) -> Result<Vec<Vec<f64>>, TrainError> {
    data.patches()
        .par_iter()
        .map(|x| model.preactivations(x).map_err(TrainError::from))
        .collect()
}

/// `p_i - t_i` for one sample.
fn output_error(model: &RankRModel, s: &[f64], label: usize) -> Vec<f64> {
    let mut e = softmax(&model.logits_from_preactivations(s));
    e[label] -= 1.0;
    e
}

/// `δ_{i,q}` for one sample and neuron.
fn hidden_delta(model: &RankRModel, s: &[f64], err: &[f64], q: usize) -> f64 {
    let v = model.output_weights();
    let back: f64 = err.iter().enumerate().map(|(k, e)| e * v[[q, k]]).sum();
    model.config().activation.derivative(s[q]) * back
}

/// `ln(max(p, PROB_FLOOR))`, keeping NaN so a broken forward pass is not
/// hidden by the floor.
fn floored_log(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(PROB_FLOOR).ln()
    }
}

/// Total negative log-likelihood `-sum_i sum_k t_{i,k} log p^k(X_i)`.
pub fn nll(model: &RankRModel, data: &LabeledPatchSet) -> Result<f64, TrainError> {
    Ok(evaluate(model, data)?.0)
}

/// Fraction of samples whose predicted class equals the label; 0 for an
/// empty set.
pub fn accuracy(model: &RankRModel, data: &LabeledPatchSet) -> Result<f64, TrainError> {
    Ok(evaluate(model, data)?.1)
}

/// Loss and accuracy in one pass.
pub fn evaluate(model: &RankRModel, data: &LabeledPatchSet) -> Result<(f64, f64), TrainError> {
    check_data(model, data)?;
    let s = all_preactivations(model, data)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (si, &label) in s.iter().zip(data.labels()) {
        let p = softmax(&model.logits_from_preactivations(si));
        loss -= floored_log(p[label]);
        if argmax(&p) == label {
            correct += 1;
        }
    }
    let acc = if data.is_empty() {
        0.0
    } else {
        correct as f64 / data.len() as f64
    };
    Ok((loss, acc))
}

/// `∂L/∂W_d^(q)` with every other parameter held fixed (0-based `q`, `mode`).
pub fn grad_factor(
    model: &RankRModel,
    data: &LabeledPatchSet,
    q: usize,
    mode: usize,
) -> Result<Array2<f64>, TrainError> {
    check_data(model, data)?;
    let cfg = model.config();
    if q >= cfg.hidden {
        return Err(ModelError::NeuronOutOfRange {
            index: q,
            hidden: cfg.hidden,
        }
        .into());
    }
    if mode >= cfg.order() {
        return Err(TensorError::ModeOutOfRange {
            mode,
            order: cfg.order(),
        }
        .into());
    }
    let s = all_preactivations(model, data)?;
    let mut grad = Array2::<f64>::zeros((cfg.input_shape[mode], cfg.rank));
    for ((x, label), si) in data.iter().zip(&s) {
        let err = output_error(model, si, label);
        let delta = hidden_delta(model, si, &err, q);
        if delta != 0.0 {
            grad.scaled_add(delta, &model.z_excluding(x, q, mode)?);
        }
    }
    Ok(grad)
}

/// `∂L/∂V`, a `Q x C` matrix.
pub fn grad_output(model: &RankRModel, data: &LabeledPatchSet) -> Result<Array2<f64>, TrainError> {
    check_data(model, data)?;
    let s = all_preactivations(model, data)?;
    Ok(output_gradient(model, data, &s))
}

fn output_gradient(model: &RankRModel, data: &LabeledPatchSet, s: &[Vec<f64>]) -> Array2<f64> {
    let cfg = model.config();
    let mut grad = Array2::<f64>::zeros((cfg.hidden, cfg.classes));
    for (si, &label) in s.iter().zip(data.labels()) {
        let err = output_error(model, si, label);
        for (q, &sq) in si.iter().enumerate() {
            let u = cfg.activation.apply(sq);
            for (k, e) in err.iter().enumerate() {
                grad[[q, k]] += u * e;
            }
        }
    }
    grad
}

/// Factor entries uniform in `±sqrt(6 / (I_d + R))`, output weights uniform
/// in `±sqrt(6 / (Q + C))`, drawn neuron by neuron, mode by mode, row-major,
/// then `V` row-major.
pub fn init_weights(cfg: &ModelConfig) -> Result<RankRModel, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = (0..cfg.hidden)
        .map(|_| {
            let factors = cfg
                .input_shape
                .iter()
                .map(|&rows| {
                    let a = (6.0 / (rows + cfg.rank) as f64).sqrt();
                    Array2::from_shape_simple_fn((rows, cfg.rank), || rng.random_range(-a..=a))
                })
                .collect();
            CpFactors::new(factors)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let b = (6.0 / (cfg.hidden + cfg.classes) as f64).sqrt();
    let output = Array2::from_shape_simple_fn((cfg.hidden, cfg.classes), || rng.random_range(-b..=b));
    RankRModel::new(cfg.clone(), hidden, output)
}

/// Unfoldings of every training sample for all but the last mode, whose
/// unfolding is a free view of the storage.
struct Unfoldings {
    per_sample: Vec<Vec<Array2<f64>>>,
}

impl Unfoldings {
    fn new(data: &LabeledPatchSet, order: usize) -> Result<Self, TensorError> {
        let per_sample = data
            .patches()
            .par_iter()
            .map(|x| (0..order - 1).map(|d| x.matricize(d)).collect())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { per_sample })
    }

    fn z(&self, x: &DenseTensor, i: usize, mode: usize, chain: &Array2<f64>) -> Array2<f64> {
        if mode + 1 == x.order() {
            x.last_mode_unfolding().dot(chain)
        } else {
            self.per_sample[i][mode].dot(chain)
        }
    }

    fn all_z(
        &self,
        data: &LabeledPatchSet,
        mode: usize,
        chain: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        data.patches()
            .par_iter()
            .enumerate()
            .map(|(i, x)| self.z(x, i, mode, chain))
            .collect()
    }
}

/// One pass of the coordinate-descent loop: every `(mode, neuron)` factor in
/// turn, each with a freshly computed `Z`, followed by the output weights.
fn alternating_epoch(
    model: &mut RankRModel,
    data: &LabeledPatchSet,
    unfoldings: &Unfoldings,
    lr: f64,
) -> Result<(), TrainError> {
    let cfg = model.config().clone();
    let mut s = all_preactivations(model, data)?;
    for mode in 0..cfg.order() {
        for q in 0..cfg.hidden {
            let chain = model.hidden_weights()[q].chain_excluding(Some(mode))?;
            let zs = unfoldings.all_z(data, mode, &chain);
            let factor = model.hidden_weights()[q].factor(mode);
            for (si, z) in s.iter_mut().zip(&zs) {
                si[q] = trace_product(factor, z);
            }
            let mut grad = Array2::<f64>::zeros(factor.dim());
            for ((si, &label), z) in s.iter().zip(data.labels()).zip(&zs) {
                let err = output_error(model, si, label);
                let delta = hidden_delta(model, si, &err, q);
                if delta != 0.0 {
                    grad.scaled_add(delta, z);
                }
            }
            let factor = model.hidden_weights_mut()[q].factor_mut(mode);
            factor.scaled_add(-lr, &grad);
            let factor = model.hidden_weights()[q].factor(mode);
            for (si, z) in s.iter_mut().zip(&zs) {
                si[q] = trace_product(factor, z);
            }
        }
    }
    let grad_v = output_gradient(model, data, &s);
    model.output_weights_mut().scaled_add(-lr, &grad_v);
    Ok(())
}

/// Full gradient at the current point, then a simultaneous step.
fn joint_epoch(
    model: &mut RankRModel,
    data: &LabeledPatchSet,
    unfoldings: &Unfoldings,
    lr: f64,
) -> Result<(), TrainError> {
    let cfg = model.config().clone();
    let s = all_preactivations(model, data)?;
    let deltas: Vec<Vec<f64>> = s
        .iter()
        .zip(data.labels())
        .map(|(si, &label)| {
            let err = output_error(model, si, label);
            (0..cfg.hidden).map(|q| hidden_delta(model, si, &err, q)).collect()
        })
        .collect();
    let mut factor_grads = Vec::with_capacity(cfg.hidden);
    for q in 0..cfg.hidden {
        let mut per_mode = Vec::with_capacity(cfg.order());
        for mode in 0..cfg.order() {
            let chain = model.hidden_weights()[q].chain_excluding(Some(mode))?;
            let zs = unfoldings.all_z(data, mode, &chain);
            let mut grad = Array2::<f64>::zeros((cfg.input_shape[mode], cfg.rank));
            for (d, z) in deltas.iter().zip(&zs) {
                if d[q] != 0.0 {
                    grad.scaled_add(d[q], z);
                }
            }
            per_mode.push(grad);
        }
        factor_grads.push(per_mode);
    }
    let grad_v = output_gradient(model, data, &s);
    for (q, per_mode) in factor_grads.into_iter().enumerate() {
        for (mode, grad) in per_mode.into_iter().enumerate() {
            model.hidden_weights_mut()[q]
                .factor_mut(mode)
                .scaled_add(-lr, &grad);
        }
    }
    model.output_weights_mut().scaled_add(-lr, &grad_v);
    Ok(())
}

/// Runs full-batch gradient descent until `max_epochs` or until the loss
/// change between consecutive epochs falls below `tol`.
pub fn train(
    model: &mut RankRModel,
    train_data: &LabeledPatchSet,
    test_data: Option<&LabeledPatchSet>,
    cfg: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<RunRecord, TrainError> {
    cfg.validate()?;
    check_data(model, train_data)?;
    if let Some(test) = test_data {
        check_data(model, test)?;
    }
    let start = Instant::now();
    let unfoldings = Unfoldings::new(train_data, model.config().order())?;
    let mut epochs: Vec<EpochStats> = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        match cfg.mode {
            TrainMode::Alternating => {
                alternating_epoch(model, train_data, &unfoldings, cfg.learning_rate)?
            }
            TrainMode::Joint => joint_epoch(model, train_data, &unfoldings, cfg.learning_rate)?,
        }
        let (loss, train_accuracy) = evaluate(model, train_data)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss });
        }
        let test_accuracy = test_data.map(|t| accuracy(model, t)).transpose()?;
        let stats = EpochStats {
            epoch,
            train_nll: loss,
            train_accuracy,
            test_accuracy,
        };
        observer.on_epoch(&stats);
        let converged = epochs
            .last()
            .is_some_and(|prev| (prev.train_nll - loss).abs() < cfg.tol);
        epochs.push(stats);
        if converged {
            break;
        }
    }
    Ok(RunRecord {
        epochs,
        elapsed: start.elapsed(),
    })
}

/// Central finite-difference check of both gradient paths on one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_factor_rel_error: f64,
    pub max_output_rel_error: f64,
}

/// Denominator floor of [`relative_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a| + |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every analytic gradient entry of `model` against a central
/// difference of the loss with step `h`.
pub fn gradient_check(
    model: &RankRModel,
    data: &LabeledPatchSet,
    h: f64,
) -> Result<GradCheck, TrainError> {
    let cfg = model.config().clone();
    let mut probe = model.clone();
    let mut max_factor: f64 = 0.0;
    for q in 0..cfg.hidden {
        for mode in 0..cfg.order() {
            let analytic = grad_factor(model, data, q, mode)?;
            for ((i, r), &g) in analytic.indexed_iter() {
                let orig = model.hidden_weights()[q].factor(mode)[[i, r]];
                probe.hidden_weights_mut()[q].factor_mut(mode)[[i, r]] = orig + h;
                let plus = nll(&probe, data)?;
                probe.hidden_weights_mut()[q].factor_mut(mode)[[i, r]] = orig - h;
                let minus = nll(&probe, data)?;
                probe.hidden_weights_mut()[q].factor_mut(mode)[[i, r]] = orig;
                max_factor = max_factor.max(relative_error(g, (plus - minus) / (2.0 * h)));
            }
        }
    }
    let analytic = grad_output(model, data)?;
    let mut max_output: f64 = 0.0;
    for ((q, k), &g) in analytic.indexed_iter() {
        let orig = model.output_weights()[[q, k]];
        probe.output_weights_mut()[[q, k]] = orig + h;
        let plus = nll(&probe, data)?;
        probe.output_weights_mut()[[q, k]] = orig - h;
        let minus = nll(&probe, data)?;
        probe.output_weights_mut()[[q, k]] = orig;
        max_output = max_output.max(relative_error(g, (plus - minus) / (2.0 * h)));
    }
    Ok(GradCheck {
        max_factor_rel_error: max_factor,
        max_output_rel_error: max_output,
    })
}

/// Logits of a sample given a model; exposed for diagnostics.
pub fn logits(model: &RankRModel, x: &DenseTensor) -> Result<Vec<f64>, ModelError> {
    let s = model.preactivations(x)?;
    let u: Vec<f64> = s.iter().map(|&v| model.config().activation.apply(v)).collect();
    Ok(output_logits(model.output_weights(), &u))
}
