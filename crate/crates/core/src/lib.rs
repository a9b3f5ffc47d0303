//! Rank-R feedforward neural networks: two-layer classifiers for tensor
//! inputs whose input-to-hidden weight tensors are constrained to a rank-R
//! CP decomposition.
//!
//! - [`tensor`]: dense tensors, unfoldings, Khatri-Rao products, CP
//!   reconstruction.
//! - [`model`]: the classifier and its factorised forward pass.
//! - [`training`]: loss, gradients, alternating coordinate descent.
//! - [`equivalence`]: fully connected baseline and its exact conversion.
//! - [`data`]: cubes, patches, splitting, noise, synthetic tasks.
//! - [`stats`]: Welch and Mann–Whitney tests.
//! - [`experiment`]: seeded multi-run experiments and CSV reports.
//! - [`io`]: file formats.

pub mod data;
pub mod equivalence;
pub mod experiment;
pub mod io;
pub mod model;
pub mod stats;
pub mod tensor;
pub mod training;

pub use data::{HsiCube, LabeledPatchSet};
pub use equivalence::Fcfnn;
pub use model::{Activation, Family, ModelConfig, RankRModel};
pub use tensor::{CpFactors, DenseTensor};
pub use training::{RunRecord, TrainConfig, TrainMode};
