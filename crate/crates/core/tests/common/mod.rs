//! Reference computations written with plain loops over explicit indices.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankr_core::{Activation, CpFactors, DenseTensor, ModelConfig, RankRModel};
use rankr_core::data::LabeledPatchSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every 0-based multi-index of `shape`, first mode fastest.
pub fn indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = shape.iter().product();
    (0..total)
        .map(|mut flat| {
            shape
                .iter()
                .map(|&p| {
                    let i = flat % p;
                    flat /= p;
                    i
                })
                .collect()
        })
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseTensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_factors(rng: &mut ChaCha8Rng, shape: &[usize], rank: usize) -> CpFactors {
    CpFactors::new(shape.iter().map(|&p| random_matrix(rng, p, rank)).collect()).unwrap()
}

pub fn random_model(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    rank: usize,
    hidden: usize,
    classes: usize,
    activation: Activation,
) -> RankRModel {
    let cfg = ModelConfig {
        input_shape: shape.to_vec(),
        rank,
        hidden,
        classes,
        activation,
        seed: 0,
    };
    let factors = (0..hidden)
        .map(|_| random_factors(rng, shape, rank))
        .collect();
    let v = random_matrix(rng, hidden, classes);
    RankRModel::new(cfg, factors, v).unwrap()
}

/// `W[idx] = sum_r prod_d B_d[idx_d, r]`, keyed by multi-index.
pub fn dense_entry(f: &CpFactors, idx: &[usize]) -> f64 {
    (0..f.rank())
        .map(|r| {
            idx.iter()
                .enumerate()
                .map(|(d, &i)| f.factor(d)[[i, r]])
                .product::<f64>()
        })
        .sum()
}

/// Full inner product over explicit multi-indices.
pub fn dense_inner(f: &CpFactors, x: &DenseTensor) -> f64 {
    indices(x.shape())
        .iter()
        .map(|idx| dense_entry(f, idx) * x.get(idx))
        .sum()
}

pub fn act(a: Activation, s: f64) -> f64 {
    match a {
        Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
        Activation::Tanh => s.tanh(),
        Activation::Relu => s.max(0.0),
    }
}

pub fn act_prime(a: Activation, s: f64) -> f64 {
    match a {
        Activation::Sigmoid => {
            let g = 1.0 / (1.0 + (-s).exp());
            g * (1.0 - g)
        }
        Activation::Tanh => 1.0 - s.tanh().powi(2),
        Activation::Relu => {
            if s > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

pub fn preacts(m: &RankRModel, x: &DenseTensor) -> Vec<f64> {
    m.hidden_weights().iter().map(|w| dense_inner(w, x)).collect()
}

pub fn probs_from_preacts(m: &RankRModel, s: &[f64]) -> Vec<f64> {
    let a = m.config().activation;
    let v = m.output_weights();
    let logits: Vec<f64> = (0..m.config().classes)
        .map(|k| (0..s.len()).map(|q| v[[q, k]] * act(a, s[q])).sum())
        .collect();
    softmax(&logits)
}

pub fn probs(m: &RankRModel, x: &DenseTensor) -> Vec<f64> {
    probs_from_preacts(m, &preacts(m, x))
}

pub fn nll(m: &RankRModel, data: &LabeledPatchSet) -> f64 {
    data.iter()
        .map(|(x, label)| -probs(m, x)[label].max(1e-300).ln())
        .sum()
}

/// `dL/ds_q` for one sample.
pub fn deltas(m: &RankRModel, x: &DenseTensor, label: usize) -> Vec<f64> {
    let s = preacts(m, x);
    let mut err = probs_from_preacts(m, &s);
    err[label] -= 1.0;
    let v = m.output_weights();
    let a = m.config().activation;
    (0..s.len())
        .map(|q| act_prime(a, s[q]) * (0..err.len()).map(|k| err[k] * v[[q, k]]).sum::<f64>())
        .collect()
}

/// `|a - b| <= tol * max(|a|, |b|, floor)`.
pub fn close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

/// A labelled set of random tensors with labels cycling over the classes.
pub fn random_set(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    n: usize,
    classes: usize,
) -> LabeledPatchSet {
    let patches = (0..n).map(|_| random_tensor(rng, shape)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    LabeledPatchSet::new(patches, labels, classes).unwrap()
}
