//! Hyperspectral cubes, labelled patch sets and the sampling protocol used by
//! the experiments: patch extraction around labelled pixels, per-class
//! train/test selection, additive white noise and a synthetic task generator.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::tensor::{cp_reconstruct, inner, CpFactors, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("patch size must be odd, got {0}")]
    EvenPatchSize(usize),
    #[error("patch size {size} exceeds spatial extent {height}x{width}")]
    PatchTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("samples per class must be at least 1")]
    InvalidAlpha,
    #[error("noise level must be non-negative and finite, got {0}")]
    InvalidNoiseLevel(f64),
    #[error("invalid patch set: {0}")]
    InvalidSet(String),
}

/// A `height x width x bands` image with a per-pixel label grid.
///
/// Values are kept in the on-disk layout: pixels row-major, each pixel's
/// spectrum contiguous. Label 0 marks an unlabelled pixel, `1..=classes`
/// the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    values: Vec<f64>,
    labels: Vec<u32>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        classes: usize,
        values: Vec<f64>,
        labels: Vec<u32>,
    ) -> Result<Self, DataError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(DataError::InvalidCube(format!(
                "extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(DataError::InvalidCube(format!(
                "expected {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if labels.len() != height * width {
            return Err(DataError::InvalidCube(format!(
                "expected {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > classes) {
            return Err(DataError::InvalidCube(format!(
                "label {bad} exceeds class count {classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            bands,
            classes,
            values,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn value(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[(row * self.width + col) * self.bands + band]
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// The values as a `height x width x bands` tensor.
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_fn(vec![self.height, self.width, self.bands], |i| {
            self.value(i[0], i[1], i[2])
        })
        .expect("cube extents are positive")
    }
}

/// Labelled samples of identical shape. Labels are 0-based class indices;
/// the one-hot target of sample `i` is [`LabeledPatchSet::one_hot`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatchSet {
    patches: Vec<DenseTensor>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledPatchSet {
    pub fn new(
        patches: Vec<DenseTensor>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        if patches.len() != labels.len() {
            return Err(DataError::InvalidSet(format!(
                "{} patches but {} labels",
                patches.len(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(DataError::InvalidSet("class count must be positive".into()));
        }
        if let Some(first) = patches.first() {
            if let Some(p) = patches.iter().find(|p| p.shape() != first.shape()) {
                return Err(DataError::InvalidSet(format!(
                    "mixed patch shapes {:?} and {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::InvalidSet(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            patches,
            labels,
            classes,
        })
    }

    pub fn empty(classes: usize) -> Self {
        Self {
            patches: Vec::new(),
            labels: Vec::new(),
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn patches(&self) -> &[DenseTensor] {
        &self.patches
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn patch_shape(&self) -> Option<&[usize]> {
        self.patches.first().map(|p| p.shape())
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.classes];
        t[self.labels[i]] = 1.0;
        t
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DenseTensor, usize)> {
        self.patches.iter().zip(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            patches: indices.iter().map(|&i| self.patches[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Appends `other`, which must have the same class count and patch shape.
    pub fn extend(&mut self, other: LabeledPatchSet) -> Result<(), DataError> {
        if other.classes != self.classes {
            return Err(DataError::InvalidSet(format!(
                "class counts differ: {} vs {}",
                self.classes, other.classes
            )));
        }
        if let (Some(a), Some(b)) = (self.patch_shape(), other.patch_shape()) {
            if a != b {
                return Err(DataError::InvalidSet(format!(
                    "mixed patch shapes {a:?} and {b:?}"
                )));
            }
        }
        self.patches.extend(other.patches);
        self.labels.extend(other.labels);
        Ok(())
    }
}

/// Reflects an out-of-range coordinate about the border pixel
/// (`-1 -> 1`, `n -> n - 2`).
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j as usize
}

/// One `s x s x bands` patch per labelled pixel, centred on that pixel, in
/// row-major pixel order. Borders are mirror-padded.
pub fn extract_patches(cube: &HsiCube, size: usize) -> Result<LabeledPatchSet, DataError> {
    if size % 2 == 0 {
        return Err(DataError::EvenPatchSize(size));
    }
    if size > cube.height.min(cube.width) {
        return Err(DataError::PatchTooLarge {
            size,
            height: cube.height,
            width: cube.width,
        });
    }
    let half = (size / 2) as isize;
    let mut patches = Vec::new();
    let mut labels = Vec::new();
    for row in 0..cube.height {
        for col in 0..cube.width {
            let label = cube.label(row, col);
            if label == 0 {
                continue;
            }
            let patch = DenseTensor::from_fn(vec![size, size, cube.bands], |i| {
                let r = mirror(row as isize + i[0] as isize - half, cube.height);
                let c = mirror(col as isize + i[1] as isize - half, cube.width);
                cube.value(r, c, i[2])
            })?;
            patches.push(patch);
            labels.push(label as usize - 1);
        }
    }
    LabeledPatchSet::new(patches, labels, cube.classes.max(1))
}

/// Number of training samples drawn from a class holding `count` samples.
pub fn train_quota(count: usize, alpha: usize) -> usize {
    if count > alpha {
        alpha
    } else {
        count / 2
    }
}

/// Per-class random split: `alpha` samples of each class go to training, or
/// half (rounded down) of a class that has no more than `alpha` samples. The
/// rest of each class goes to the test set.
pub fn split_per_class(
    set: &LabeledPatchSet,
    alpha: usize,
    seed: u64,
) -> Result<(LabeledPatchSet, LabeledPatchSet), DataError> {
    if alpha == 0 {
        return Err(DataError::InvalidAlpha);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); set.classes];
    for (i, &l) in set.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n_train = train_quota(members.len(), alpha);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    Ok((set.subset(&train), set.subset(&test)))
}

/// Population standard deviation of each index of the last mode, pooled over
/// all patches and all other positions.
pub fn band_std(set: &LabeledPatchSet) -> Vec<f64> {
    let Some(shape) = set.patch_shape() else {
        return Vec::new();
    };
    let bands = *shape.last().expect("patches have at least one mode");
    let per_band = set.patches[0].len() / bands;
    let n = (per_band * set.len()) as f64;
    let mut mean = vec![0.0; bands];
    for p in &set.patches {
        for (b, block) in p.data().chunks(per_band).enumerate() {
            mean[b] += block.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; bands];
    for p in &set.patches {
        for (b, block) in p.data().chunks(per_band).enumerate() {
            var[b] += block.iter().map(|x| (x - mean[b]).powi(2)).sum::<f64>();
        }
    }
    var.into_iter().map(|v| (v / n).sqrt()).collect()
}

/// Adds zero-mean Gaussian noise with standard deviation `level * σ_b` to
/// every entry, where `σ_b` is the clean per-band standard deviation.
pub fn add_noise(
    set: &LabeledPatchSet,
    level: f64,
    seed: u64,
) -> Result<LabeledPatchSet, DataError> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(DataError::InvalidNoiseLevel(level));
    }
    if level == 0.0 || set.is_empty() {
        return Ok(set.clone());
    }
    let sigma = band_std(set);
    let per_band = set.patches[0].len() / sigma.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    for p in &mut out.patches {
        for (b, block) in p.data_mut().chunks_mut(per_band).enumerate() {
            let scale = level * sigma[b];
            if scale == 0.0 {
                continue;
            }
            for x in block {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += scale * z;
            }
        }
    }
    Ok(out)
}

/// Standard deviation of the additive perturbation in synthetic samples.
pub const SYNTH_NOISE_STD: f64 = 0.1;

/// A synthetic classification task: each class has a rank-1 signature
/// tensor and samples are that signature plus white noise.
#[derive(Debug, Clone)]
pub struct SynthTask {
    shape: Vec<usize>,
    signatures: Vec<DenseTensor>,
    rng: ChaCha8Rng,
}

impl SynthTask {
    /// Draws the class signatures. Factor vectors have unit RMS entries; the
    /// mode-1 vectors are orthogonalised across classes when there is room,
    /// which makes the signatures mutually orthogonal.
    pub fn new(seed: u64, shape: &[usize], classes: usize) -> Result<Self, DataError> {
        if classes < 2 {
            return Err(DataError::InvalidSet("need at least two classes".into()));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape.to_vec()).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors: Vec<Vec<Vec<f64>>> = (0..classes)
            .map(|_| {
                shape
                    .iter()
                    .map(|&p| (0..p).map(|_| rng.sample(StandardNormal)).collect())
                    .collect()
            })
            .collect();
        if classes <= shape[0] {
            for k in 0..classes {
                for l in 0..k {
                    let (head, tail) = vectors.split_at_mut(k);
                    let prev = &head[l][0];
                    let cur = &mut tail[0][0];
                    let proj = crate::tensor::dot(cur, prev) / crate::tensor::dot(prev, prev);
                    cur.iter_mut().zip(prev).for_each(|(c, p)| *c -= proj * p);
                }
            }
        }
        let signatures = vectors
            .into_iter()
            .map(|modes| {
                let factors = modes
                    .into_iter()
                    .map(|mut v| {
                        let rms = (crate::tensor::dot(&v, &v) / v.len() as f64).sqrt();
                        v.iter_mut().for_each(|x| *x /= rms);
                        Array2::from_shape_vec((v.len(), 1), v).expect("column vector")
                    })
                    .collect();
                Ok(cp_reconstruct(&CpFactors::new(factors)?))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Self {
            shape: shape.to_vec(),
            signatures,
            rng,
        })
    }

    pub fn classes(&self) -> usize {
        self.signatures.len()
    }

    pub fn signatures(&self) -> &[DenseTensor] {
        &self.signatures
    }

    /// Draws `n_per_class` samples of every class, class by class.
    pub fn sample(&mut self, n_per_class: usize) -> LabeledPatchSet {
        let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("positive std");
        let mut patches = Vec::with_capacity(n_per_class * self.classes());
        let mut labels = Vec::with_capacity(n_per_class * self.classes());
        for (k, sig) in self.signatures.iter().enumerate() {
            for _ in 0..n_per_class {
                let data = sig
                    .data()
                    .iter()
                    .map(|&s| s + noise.sample(&mut self.rng))
                    .collect();
                patches.push(DenseTensor::new(self.shape.clone(), data).expect("shape checked"));
                labels.push(k);
            }
        }
        LabeledPatchSet::new(patches, labels, self.classes()).expect("consistent by construction")
    }

    /// Accuracy of the matched-filter rule `argmax_k <signature_k, X>`.
    pub fn matched_filter_accuracy(&self, set: &LabeledPatchSet) -> f64 {
        if set.is_empty() {
            return 1.0;
        }
        let correct = set
            .iter()
            .filter(|(x, label)| {
                let scores: Vec<f64> = self
                    .signatures
                    .iter()
                    .map(|s| inner(s, x).unwrap_or(f64::NEG_INFINITY))
                    .collect();
                crate::model::argmax(&scores) == *label
            })
            .count();
        correct as f64 / set.len() as f64
    }
}

/// `n_per_class` samples per class of a fresh synthetic task.
pub fn synth(
    seed: u64,
    n_per_class: usize,
    shape: &[usize],
    classes: usize,
) -> Result<LabeledPatchSet, DataError> {
    Ok(SynthTask::new(seed, shape, classes)?.sample(n_per_class))
}

/// Train and test sets drawn from the same synthetic task.
pub fn synth_train_test(
    seed: u64,
    n_train: usize,
    n_test: usize,
    shape: &[usize],
    classes: usize,
) -> Result<(LabeledPatchSet, LabeledPatchSet), DataError> {
    let mut task = SynthTask::new(seed, shape, classes)?;
    let train = task.sample(n_train);
    let test = task.sample(n_test);
    Ok((train, test))
}

/// Synthetic cube whose labelled pixels form class blocks; handy for
/// exercising the cube path of the pipeline without a real dataset.
pub fn synth_cube(
    seed: u64,
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
) -> Result<HsiCube, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..bands).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let mut values = Vec::with_capacity(height * width * bands);
    let mut labels = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let class = (row * classes) / height;
            let unlabeled = (row + col) % 7 == 0;
            labels.push(if unlabeled { 0 } else { class as u32 + 1 });
            for b in 0..bands {
                let v = spectra[class][b] + 0.05 * rng.sample::<f64, _>(StandardNormal);
                values.push(v as f32 as f64);
            }
        }
    }
    HsiCube::new(height, width, bands, classes, values, labels)
}
