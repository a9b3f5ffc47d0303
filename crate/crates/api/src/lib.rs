//! Request and response bodies of the rankr HTTP service.
//!
//! Models and patch sets cross the wire as base64 of their binary file
//! formats, so a value written by the CLI can be read back bit for bit.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rankr_core::equivalence::EquivalenceReport;
use rankr_core::experiment::{AggregateResult, ComparisonRow, ExperimentSpec, ParamRow, ShapeConfig};
use rankr_core::training::{EpochStats, GradCheck};
use rankr_core::{Activation, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const API_PREFIX: &str = "/v1";

pub fn encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(text)
}

/// How a failure should be reported to a caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// The request itself was wrong; retrying it unchanged will fail again.
    Validation,
    NotFound,
    /// The request was fine but the work failed, e.g. training diverged.
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// A labelled patch set, given inline or by a path the server can read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetRef {
    /// Base64 of a patch-set file.
    Inline { patches: String },
    /// A patch-set file on the server's filesystem.
    PatchFile { path: PathBuf },
    /// Every labelled pixel of a cube file.
    Cube { path: PathBuf, patch_size: usize },
    Synth {
        seed: u64,
        shape: Vec<usize>,
        classes: usize,
        n_per_class: usize,
    },
}

/// A Rank-R model, given inline or by the id the server assigned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelRef {
    Id { id: String },
    /// Base64 of a model file.
    Inline { model: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTableRequest {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_ranks")]
    pub ranks: Vec<usize>,
    /// Benchmark scene shapes when absent.
    #[serde(default)]
    pub configs: Option<Vec<ShapeConfig>>,
}

impl Default for ParamTableRequest {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            ranks: default_ranks(),
            configs: None,
        }
    }
}

fn default_hidden() -> usize {
    75
}

fn default_ranks() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTableResponse {
    pub rows: Vec<ParamRow>,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub train_data: DatasetRef,
    #[serde(default)]
    pub test_data: Option<DatasetRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model_id: String,
    pub model: String,
    pub param_count: u64,
    pub epochs: Vec<EpochStats>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub model: ModelRef,
    pub data: DatasetRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub count: usize,
    pub nll: f64,
    pub accuracy: f64,
    /// Predicted class (0-based) of every sample, in order.
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResponse {
    pub banner: String,
    pub param_counts: Vec<(usize, u64)>,
    pub aggregate: AggregateResult,
    pub epochs_csv: String,
    pub aggregate_csv: String,
}

/// An experiment request is the experiment description itself.
pub type ExperimentRequest = ExperimentSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub a: AggregateResult,
    pub b: AggregateResult,
    #[serde(default = "default_alpha_sig")]
    pub alpha_sig: f64,
}

fn default_alpha_sig() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub rows: Vec<ComparisonRow>,
    pub csv: String,
}

/// The dense network to convert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FcfnnSource {
    /// Base64 of a dense-network file.
    Inline { fcfnn: String },
    /// Weights uniform in `[-1, 1]`.
    Random {
        hidden: usize,
        classes: usize,
        #[serde(default)]
        activation: Activation,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertRequest {
    pub source: FcfnnSource,
    /// Tensor shape the dense input vector is folded into.
    pub shape: Vec<usize>,
    /// Random inputs compared after conversion; 0 skips the check.
    #[serde(default)]
    pub verify_trials: usize,
    #[serde(default)]
    pub verify_seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvertResponse {
    pub model_id: String,
    pub model: String,
    pub rank: usize,
    pub fcfnn_params: u64,
    pub rankr_params: u64,
    pub report: Option<EquivalenceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRequest {
    /// Randomly initialised from its seed.
    pub model: ModelConfig,
    pub data: DatasetRef,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResponse {
    pub step: f64,
    pub result: GradCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub seed: u64,
    pub shape: Vec<usize>,
    pub classes: usize,
    pub n_per_class: usize,
    /// Size per class of a second, held-out set drawn from the same task.
    #[serde(default)]
    pub held_out_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthResponse {
    pub samples: PatchSetResponse,
    pub held_out: Option<PatchSetResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRequest {
    pub data: DatasetRef,
    pub level: f64,
    pub seed: u64,
}

/// A patch set returned by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSetResponse {
    pub count: usize,
    pub classes: usize,
    pub patch_shape: Option<Vec<usize>>,
    /// Base64 of a patch-set file.
    pub patches: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub config: ModelConfig,
    pub param_count: u64,
    pub model: String,
}
