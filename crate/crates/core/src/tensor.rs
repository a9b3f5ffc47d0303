//! Dense tensors and the multilinear operators the model is built on.
//!
//! Storage is column-major in the tensor sense: the first mode varies
//! fastest. With 1-based indices `(i_1, ..., i_D)` an element lives at
//! flat position `1 + sum_d (i_d - 1) * prod_{d' < d} p_{d'}`, which is exactly
//! the order produced by [`DenseTensor::vec`]. Everything in Rust code is
//! 0-based; [`index`] holds the only place where the 1-based formulas are
//! spelled out.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape must have at least one mode and all extents must be positive, got {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("column count mismatch: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },
    #[error("factor {mode} has {rows} rows, expected {expected}")]
    FactorRows {
        mode: usize,
        rows: usize,
        expected: usize,
    },
    #[error("Khatri-Rao chain needs at least one matrix")]
    EmptyChain,
}

/// 1-based index maps, written the way they appear in the math.
pub mod index {
    /// Flat position (1-based) of the element with 1-based multi-index `idx`.
    pub fn vec_position(shape: &[usize], idx: &[usize]) -> usize {
        let mut pos = 1;
        let mut stride = 1;
        for (&i, &p) in idx.iter().zip(shape) {
            pos += (i - 1) * stride;
            stride *= p;
        }
        pos
    }

    /// Column (1-based) of the mode-`mode` unfolding holding the element with
    /// 1-based multi-index `idx`; `mode` is 1-based as well.
    pub fn unfold_column(shape: &[usize], idx: &[usize], mode: usize) -> usize {
        let mut col = 1;
        let mut stride = 1;
        for (d, (&i, &p)) in idx.iter().zip(shape).enumerate() {
            if d + 1 == mode {
                continue;
            }
            col += (i - 1) * stride;
            stride *= p;
        }
        col
    }
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// A dense real tensor of arbitrary order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = check_shape(&shape)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index.
    pub fn from_fn<F>(shape: Vec<usize>, mut f: F) -> Result<Self, TensorError>
    where
        F: FnMut(&[usize]) -> f64,
    {
        let n = check_shape(&shape)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            advance(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a 0-based multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        index::vec_position(&self.shape, &idx.iter().map(|i| i + 1).collect::<Vec<_>>()) - 1
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.offset(idx);
        self.data[k] = value;
    }

    /// Vectorization; mode 1 fastest.
    pub fn vec(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Inverse of [`DenseTensor::vec`] for the given shape.
    pub fn ten(v: &[f64], shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), v.to_vec())
    }

    /// Mode-`mode` unfolding (0-based mode). Columns are the mode fibers,
    /// ordered with the lowest remaining mode varying fastest.
    pub fn matricize(&self, mode: usize) -> Result<Array2<f64>, TensorError> {
        let order = self.order();
        if mode >= order {
            return Err(TensorError::ModeOutOfRange { mode, order });
        }
        let rows = self.shape[mode];
        let cols = self.data.len() / rows;
        if mode + 1 == order {
            // last mode: every row is a contiguous block
            return Ok(Array2::from_shape_vec((rows, cols), self.data.clone())
                .expect("unfolding extents match data length"));
        }
        let mut out = Array2::<f64>::zeros((rows, cols));
        let mut col_strides = vec![0usize; order];
        let mut stride = 1;
        for d in 0..order {
            if d != mode {
                col_strides[d] = stride;
                stride *= self.shape[d];
            }
        }
        let mut idx = vec![0usize; order];
        for &x in &self.data {
            let col: usize = idx.iter().zip(&col_strides).map(|(i, s)| i * s).sum();
            out[[idx[mode], col]] = x;
            advance(&mut idx, &self.shape);
        }
        Ok(out)
    }

    /// Borrowing view of the last-mode unfolding; no copy is needed since
    /// every row is a contiguous slab of the storage.
    pub fn last_mode_unfolding(&self) -> ArrayView2<'_, f64> {
        let rows = *self.shape.last().expect("tensor has at least one mode");
        ArrayView2::from_shape((rows, self.data.len() / rows), &self.data)
            .expect("unfolding extents match data length")
    }

    /// Returns true when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Odometer increment over a column-major multi-index.
pub(crate) fn advance(idx: &mut [usize], shape: &[usize]) {
    for (i, &p) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < p {
            return;
        }
        *i = 0;
    }
}

/// Sum over all entries of the elementwise product.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64, TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(dot(&a.data, &b.data))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column-wise Kronecker product. Row `i * n + j` of the result holds
/// `a[i, r] * b[j, r]`, so the rows of `b` vary fastest.
pub fn khatri_rao(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>, TensorError> {
    let (m, ra) = a.dim();
    let (n, rb) = b.dim();
    if ra != rb {
        return Err(TensorError::ColumnMismatch {
            left: ra,
            right: rb,
        });
    }
    let mut out = Array2::<f64>::zeros((m * n, ra));
    for i in 0..m {
        for j in 0..n {
            let row = i * n + j;
            for r in 0..ra {
                out[[row, r]] = a[[i, r]] * b[[j, r]];
            }
        }
    }
    Ok(out)
}

/// `mats[0] ⊙ mats[1] ⊙ ... ⊙ mats[last]`, folded left to right.
pub fn khatri_rao_chain(mats: &[&Array2<f64>]) -> Result<Array2<f64>, TensorError> {
    let (first, rest) = mats.split_first().ok_or(TensorError::EmptyChain)?;
    let mut acc = (*first).clone();
    for m in rest {
        acc = khatri_rao(&acc, m)?;
    }
    Ok(acc)
}

/// Factor matrices of a rank-R CP decomposition; factor `d` is `p_d x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    factors: Vec<Array2<f64>>,
}

impl CpFactors {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self, TensorError> {
        let first = factors.first().ok_or(TensorError::EmptyChain)?;
        let rank = first.ncols();
        if rank == 0 {
            return Err(TensorError::InvalidShape(vec![0]));
        }
        for f in &factors {
            if f.ncols() != rank {
                return Err(TensorError::ColumnMismatch {
                    left: rank,
                    right: f.ncols(),
                });
            }
            if f.nrows() == 0 {
                return Err(TensorError::InvalidShape(
                    factors.iter().map(|f| f.nrows()).collect(),
                ));
            }
        }
        Ok(Self { factors })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Result<Self, TensorError> {
        check_shape(shape)?;
        Self::new(
            shape
                .iter()
                .map(|&p| Array2::zeros((p, rank)))
                .collect(),
        )
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut Array2<f64> {
        &mut self.factors[mode]
    }

    /// `W_D ⊙ ... ⊙ W_{d+1} ⊙ W_{d-1} ⊙ ... ⊙ W_1`, skipping `skip` (0-based).
    /// With `skip = None` this is the full chain, whose row sums give `vec`
    /// of the reconstruction.
    pub fn chain_excluding(&self, skip: Option<usize>) -> Result<Array2<f64>, TensorError> {
        let mats: Vec<&Array2<f64>> = self
            .factors
            .iter()
            .enumerate()
            .rev()
            .filter(|(d, _)| Some(*d) != skip)
            .map(|(_, f)| f)
            .collect();
        khatri_rao_chain(&mats)
    }
}

/// Dense tensor `sum_r b_1^(r) ∘ ... ∘ b_D^(r)`.
pub fn cp_reconstruct(f: &CpFactors) -> DenseTensor {
    let shape = f.shape();
    let rank = f.rank();
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    let mut idx = vec![0usize; shape.len()];
    for x in data.iter_mut() {
        let mut acc = 0.0;
        for r in 0..rank {
            let mut prod = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                prod *= f.factors[d][[i, r]];
            }
            acc += prod;
        }
        *x = acc;
        advance(&mut idx, &shape);
    }
    DenseTensor { shape, data }
}
