//! Repeated seeded runs, aggregation, significance comparison and the
//! parameter-count table, all rendered as CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{add_noise, extract_patches, split_per_class, synth, DataError, LabeledPatchSet};
use crate::io::{load_cube, FormatError};
use crate::model::{param_count, Activation, Family, ModelConfig, ModelError};
use crate::stats::{mann_whitney_u, mean, sample_std, welch_t, StatsError};
use crate::training::{init_weights, train, EpochStats, TrainConfig, TrainError, TrainMode};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("result shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("every run failed; first error: {0}")]
    AllRunsFailed(String),
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// A pool of `n_per_class` synthetic samples per class.
    Synth {
        seed: u64,
        shape: Vec<usize>,
        classes: usize,
        n_per_class: usize,
    },
    /// A cube on disk; one patch per labelled pixel.
    Cube { path: PathBuf, patch_size: usize },
}

impl DataSpec {
    /// All labelled samples before any split.
    pub fn load_pool(&self) -> Result<LabeledPatchSet, ExperimentError> {
        match self {
            DataSpec::Synth {
                seed,
                shape,
                classes,
                n_per_class,
            } => Ok(synth(*seed, *n_per_class, shape, *classes)?),
            DataSpec::Cube { path, patch_size } => {
                let cube = load_cube(path)?;
                Ok(extract_patches(&cube, *patch_size)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataSpec,
    #[serde(default = "defaults::ranks")]
    pub ranks: Vec<usize>,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    /// Training samples per class.
    #[serde(default = "defaults::alpha")]
    pub alpha: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "defaults::runs")]
    pub runs: usize,
    /// Epochs at which test accuracy is aggregated; the largest one is the
    /// training length.
    #[serde(default = "defaults::checkpoints")]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub tol: f64,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub mode: TrainMode,
}

mod defaults {
    pub fn ranks() -> Vec<usize> {
        vec![1, 2, 3, 4, 5]
    }
    pub fn hidden() -> usize {
        75
    }
    pub fn alpha() -> usize {
        10
    }
    pub fn runs() -> usize {
        10
    }
    pub fn checkpoints() -> Vec<usize> {
        vec![50, 500]
    }
    pub fn learning_rate() -> f64 {
        super::TrainConfig::default().learning_rate
    }
}

impl ExperimentSpec {
    pub fn with_data(data: DataSpec) -> Self {
        Self {
            data,
            ranks: defaults::ranks(),
            hidden: defaults::hidden(),
            alpha: defaults::alpha(),
            noise: 0.0,
            runs: defaults::runs(),
            checkpoints: defaults::checkpoints(),
            base_seed: 0,
            learning_rate: defaults::learning_rate(),
            tol: 0.0,
            activation: Activation::Sigmoid,
            mode: TrainMode::Alternating,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return bad("ranks must be a non-empty list of positive integers");
        }
        if self.checkpoints.is_empty() || self.checkpoints.contains(&0) {
            return bad("checkpoints must be a non-empty list of positive epochs");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if self.alpha == 0 {
            return bad("alpha must be at least 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise level must be non-negative");
        }
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs(),
            tol: self.tol,
            mode: self.mode,
        }
        .validate()
        .map_err(|e| ExperimentError::Invalid(e.to_string()))
    }

    pub fn max_epochs(&self) -> usize {
        self.checkpoints.iter().copied().max().unwrap_or(0)
    }

    fn sorted_checkpoints(&self) -> Vec<usize> {
        let mut c = self.checkpoints.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Seeds for one run, all derived from the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub split: u64,
    pub noise: u64,
    pub init: u64,
}

impl RunSeeds {
    pub fn new(base: u64, run: usize) -> Self {
        let s = base.wrapping_add(run as u64);
        Self {
            split: s,
            noise: s ^ 0x9E37_79B9_7F4A_7C15,
            init: s.wrapping_mul(0xBF58_476D_1CE4_E5B9).wrapping_add(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub rank: usize,
    pub run: usize,
    pub epochs: Vec<EpochStats>,
}

impl RunOutcome {
    /// Test accuracy at `epoch`, or at the last epoch if training stopped
    /// earlier.
    pub fn test_accuracy_at(&self, epoch: usize) -> Option<f64> {
        self.epochs
            .iter()
            .take_while(|e| e.epoch <= epoch)
            .last()
            .and_then(|e| e.test_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub rank: usize,
    pub run: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub rank: usize,
    pub checkpoint: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (`n - 1` divisor); 0 for a single run.
    /// Both statistics are `None` when every run of the cell failed.
    pub std: Option<f64>,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub cells: Vec<AggregateCell>,
    pub failed: Vec<FailedRun>,
}

impl AggregateResult {
    pub fn from_runs(
        ranks: &[usize],
        checkpoints: &[usize],
        runs: &[RunOutcome],
        failed: Vec<FailedRun>,
    ) -> Self {
        let mut cells = Vec::new();
        for &rank in ranks {
            for &checkpoint in checkpoints {
                let raw: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.rank == rank)
                    .filter_map(|r| r.test_accuracy_at(checkpoint))
                    .collect();
                let (m, s) = match raw.len() {
                    0 => (None, None),
                    1 => (Some(raw[0]), Some(0.0)),
                    _ => (Some(mean(&raw)), Some(sample_std(&raw))),
                };
                cells.push(AggregateCell {
                    rank,
                    checkpoint,
                    mean: m,
                    std: s,
                    raw,
                });
            }
        }
        Self { cells, failed }
    }

    pub fn cell(&self, rank: usize, checkpoint: usize) -> Option<&AggregateCell> {
        self.cells
            .iter()
            .find(|c| c.rank == rank && c.checkpoint == checkpoint)
    }
}

pub const EPOCHS_CSV_HEADER: &str = "rank,run,epoch,train_nll,train_acc,test_acc";
pub const AGGREGATE_CSV_HEADER: &str = "rank,checkpoint,mean_acc,std_acc,n_runs";
pub const COMPARISON_CSV_HEADER: &str = "rank,checkpoint,p_welch,p_mwu,reject_5pct";
pub const PARAM_TABLE_CSV_HEADER: &str = "dataset,shape,classes,model,params,fcfnn_over_model";

/// Per-epoch rows of every successful run.
pub fn epochs_csv(runs: &[RunOutcome]) -> String {
    let mut out = format!("{EPOCHS_CSV_HEADER}\n");
    for r in runs {
        for e in &r.epochs {
            let test = e.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.rank, r.run, e.epoch, e.train_nll, e.train_accuracy, test
            );
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn aggregate_csv(result: &AggregateResult) -> String {
    let mut out = format!("{AGGREGATE_CSV_HEADER}\n");
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.rank,
            c.checkpoint,
            opt(c.mean),
            opt(c.std),
            c.raw.len()
        );
    }
    out
}

/// Reads back the output of [`epochs_csv`].
pub fn parse_epochs_csv(text: &str) -> Result<Vec<RunOutcome>, ExperimentError> {
    let bad = |n: usize, why: &str| ExperimentError::Invalid(format!("epoch log line {n}: {why}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EPOCHS_CSV_HEADER => {}
        _ => return Err(bad(1, "missing header")),
    }
    let mut runs: Vec<RunOutcome> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(i + 1, "expected 6 fields"));
        }
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i + 1, "bad integer"));
        let real = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let (rank, run) = (int(0)?, int(1)?);
        let stats = EpochStats {
            epoch: int(2)?,
            train_nll: real(3)?,
            train_accuracy: real(4)?,
            test_accuracy: if f[5].is_empty() { None } else { Some(real(5)?) },
        };
        match runs.last_mut() {
            Some(r) if r.rank == rank && r.run == run => r.epochs.push(stats),
            _ => runs.push(RunOutcome {
                rank,
                run,
                epochs: vec![stats],
            }),
        }
    }
    Ok(runs)
}

/// Aggregate statistics of an epoch log at `checkpoints`, ranks in order of
/// first appearance.
pub fn aggregate_from_epochs_csv(
    text: &str,
    checkpoints: &[usize],
) -> Result<AggregateResult, ExperimentError> {
    let runs = parse_epochs_csv(text)?;
    let mut ranks: Vec<usize> = Vec::new();
    for r in &runs {
        if !ranks.contains(&r.rank) {
            ranks.push(r.rank);
        }
    }
    Ok(AggregateResult::from_runs(&ranks, checkpoints, &runs, Vec::new()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub aggregate: AggregateResult,
    pub runs: Vec<RunOutcome>,
    /// Trainable parameters per rank, in the order of `spec.ranks`.
    pub param_counts: Vec<(usize, u64)>,
    pub banner: String,
    pub epochs_csv: String,
    pub aggregate_csv: String,
}

impl ExperimentOutput {
    /// Writes `epochs.csv` and `aggregate.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("epochs.csv"), &self.epochs_csv)?;
        std::fs::write(dir.join("aggregate.csv"), &self.aggregate_csv)?;
        Ok(())
    }
}

/// Trains `spec.runs` models for every rank and aggregates test accuracy at
/// each checkpoint. Runs are independent and may execute in parallel; their
/// results are ordered by `(rank, run)`. Diverged runs are listed in
/// `aggregate.failed` and left out of the statistics.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    spec.validate()?;
    let pool = spec.data.load_pool()?;
    let shape = pool
        .patch_shape()
        .ok_or_else(|| ExperimentError::Invalid("dataset has no labelled samples".into()))?
        .to_vec();
    let classes = pool.classes();
    let model_cfg = |rank: usize, seed: u64| ModelConfig {
        input_shape: shape.clone(),
        rank,
        hidden: spec.hidden,
        classes,
        activation: spec.activation,
        seed,
    };
    for &rank in &spec.ranks {
        model_cfg(rank, 0).validate()?;
    }
    let param_counts: Vec<(usize, u64)> = spec
        .ranks
        .iter()
        .map(|&r| (r, param_count(&model_cfg(r, 0), Family::RankR)))
        .collect();
    let mut banner = format!(
        "input shape {:?}, {} classes, {} samples, Q={}, alpha={}, noise={}, runs={}\n",
        shape,
        classes,
        pool.len(),
        spec.hidden,
        spec.alpha,
        spec.noise,
        spec.runs
    );
    for (rank, count) in &param_counts {
        let _ = writeln!(banner, "rank {rank}: {count} trainable parameters");
    }

    let train_cfg = TrainConfig {
        learning_rate: spec.learning_rate,
        max_epochs: spec.max_epochs(),
        tol: spec.tol,
        mode: spec.mode,
    };
    let jobs: Vec<(usize, usize)> = spec
        .ranks
        .iter()
        .flat_map(|&rank| (0..spec.runs).map(move |run| (rank, run)))
        .collect();
    let results: Vec<Result<RunOutcome, FailedRun>> = jobs
        .par_iter()
        .map(|&(rank, run)| {
            let seeds = RunSeeds::new(spec.base_seed, run);
            let fail = |e: &dyn std::fmt::Display| FailedRun {
                rank,
                run,
                error: e.to_string(),
            };
            let noisy = add_noise(&pool, spec.noise, seeds.noise).map_err(|e| fail(&e))?;
            let (train_set, test_set) =
                split_per_class(&noisy, spec.alpha, seeds.split).map_err(|e| fail(&e))?;
            let mut model = init_weights(&model_cfg(rank, seeds.init)).map_err(|e| fail(&e))?;
            let record = train(
                &mut model,
                &train_set,
                Some(&test_set),
                &train_cfg,
                &mut |_: &EpochStats| {},
            )
            .map_err(|e: TrainError| fail(&e))?;
            Ok(RunOutcome {
                rank,
                run,
                epochs: record.epochs,
            })
        })
        .collect();
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(o) => runs.push(o),
            Err(f) => failed.push(f),
        }
    }
    if runs.is_empty() {
        let first = failed.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(ExperimentError::AllRunsFailed(first));
    }
    for f in &failed {
        let _ = writeln!(banner, "warning: rank {} run {} failed: {}", f.rank, f.run, f.error);
    }
    let aggregate =
        AggregateResult::from_runs(&spec.ranks, &spec.sorted_checkpoints(), &runs, failed);
    Ok(ExperimentOutput {
        epochs_csv: epochs_csv(&runs),
        aggregate_csv: aggregate_csv(&aggregate),
        aggregate,
        runs,
        param_counts,
        banner,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub checkpoint: usize,
    pub p_welch: f64,
    pub p_mwu: f64,
    pub reject: bool,
}

/// Per-cell Welch and Mann–Whitney p-values between two result sets of the
/// same shape. The null hypothesis of equal performance is rejected when
/// both tests fall below `alpha_sig`.
pub fn compare_models(
    a: &AggregateResult,
    b: &AggregateResult,
    alpha_sig: f64,
) -> Result<Vec<ComparisonRow>, ExperimentError> {
    if a.cells.len() != b.cells.len() {
        return Err(ExperimentError::ShapeMismatch(format!(
            "{} cells vs {} cells",
            a.cells.len(),
            b.cells.len()
        )));
    }
    a.cells
        .iter()
        .zip(&b.cells)
        .map(|(ca, cb)| {
            if (ca.rank, ca.checkpoint) != (cb.rank, cb.checkpoint) {
                return Err(ExperimentError::ShapeMismatch(format!(
                    "cell (rank {}, epoch {}) vs (rank {}, epoch {})",
                    ca.rank, ca.checkpoint, cb.rank, cb.checkpoint
                )));
            }
            if ca.raw.len() != cb.raw.len() {
                return Err(ExperimentError::ShapeMismatch(format!(
                    "rank {} epoch {}: {} runs vs {} runs",
                    ca.rank,
                    ca.checkpoint,
                    ca.raw.len(),
                    cb.raw.len()
                )));
            }
            let p_welch = welch_t(&ca.raw, &cb.raw)?.p_value;
            let p_mwu = mann_whitney_u(&ca.raw, &cb.raw)?.p_value;
            Ok(ComparisonRow {
                rank: ca.rank,
                checkpoint: ca.checkpoint,
                p_welch,
                p_mwu,
                reject: p_welch < alpha_sig && p_mwu < alpha_sig,
            })
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.rank, r.checkpoint, r.p_welch, r.p_mwu, r.reject
        );
    }
    out
}

/// A dataset-shaped configuration for the parameter table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub name: String,
    pub shape: Vec<usize>,
    pub classes: usize,
}

/// Patch shapes (`5 x 5 x bands`) and class counts of the three benchmark
/// scenes. Indian Pines is taken with 200 bands, the usual count after
/// removing water-absorption bands.
pub fn benchmark_shapes() -> Vec<ShapeConfig> {
    vec![
        ShapeConfig {
            name: "indian_pines".into(),
            shape: vec![5, 5, 200],
            classes: 16,
        },
        ShapeConfig {
            name: "botswana".into(),
            shape: vec![5, 5, 145],
            classes: 14,
        },
        ShapeConfig {
            name: "pavia_university".into(),
            shape: vec![5, 5, 103],
            classes: 9,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub dataset: String,
    pub shape: Vec<usize>,
    pub classes: usize,
    /// `rank_1` .. `rank_5` or `fcfnn`.
    pub model: String,
    pub params: u64,
    /// FCFNN parameter count divided by this model's.
    pub fcfnn_over_model: f64,
}

/// Parameter counts of Rank-R networks for `ranks` and of the fully
/// connected baseline, for every configuration.
pub fn param_table(
    configs: &[ShapeConfig],
    hidden: usize,
    ranks: &[usize],
) -> Result<Vec<ParamRow>, ExperimentError> {
    let mut rows = Vec::new();
    for c in configs {
        let base = ModelConfig {
            input_shape: c.shape.clone(),
            rank: 1,
            hidden,
            classes: c.classes,
            activation: Activation::Sigmoid,
            seed: 0,
        };
        let fc = param_count(&base, Family::Fcfnn);
        for &rank in ranks {
            let cfg = ModelConfig { rank, ..base.clone() };
            cfg.validate()?;
            let params = param_count(&cfg, Family::RankR);
            rows.push(ParamRow {
                dataset: c.name.clone(),
                shape: c.shape.clone(),
                classes: c.classes,
                model: format!("rank_{rank}"),
                params,
                fcfnn_over_model: fc as f64 / params as f64,
            });
        }
        base.validate()?;
        rows.push(ParamRow {
            dataset: c.name.clone(),
            shape: c.shape.clone(),
            classes: c.classes,
            model: "fcfnn".into(),
            params: fc,
            fcfnn_over_model: 1.0,
        });
    }
    Ok(rows)
}

/// Note written above the parameter table.
pub const BASELINE_NOTE: &str =
    "# baseline: fully connected two-layer network on vectorised patches (stands in for a CNN)";

pub fn param_table_csv(rows: &[ParamRow]) -> String {
    let mut out = format!("{BASELINE_NOTE}\n{PARAM_TABLE_CSV_HEADER}\n");
    for r in rows {
        let shape = r
            .shape
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.dataset, shape, r.classes, r.model, r.params, r.fcfnn_over_model
        );
    }
    out
}
