//! `rankr` command line: every subcommand is a request to the rankr service,
//! either a remote one (`--server`) or one started in-process for the call.

pub mod config;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rankr_api::*;
use rankr_client::{Client, ClientError};
use rankr_core::data::LabeledPatchSet;
use rankr_core::experiment::{aggregate_from_epochs_csv, DataSpec, ExperimentSpec};
use rankr_core::io::{self, FormatError};
use rankr_core::training::TrainMode;
use rankr_core::{Activation, ModelConfig, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rankr", version, about = "Rank-R feedforward networks for tensor-valued inputs")]
pub struct Cli {
    /// Root URL of a running rankr service; without it an embedded service
    /// is started for the duration of the command.
    #[arg(long, global = true)]
    pub server: Option<String>,
    /// File of key=value lines supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on a patch file and save it.
    Train(TrainArgs),
    /// Loss and accuracy of a saved model on a patch file.
    Eval(EvalArgs),
    /// Sweep ranks over repeated seeded runs and write CSV results.
    Experiment(ExperimentArgs),
    /// Significance tests between two experiment result directories.
    Compare(CompareArgs),
    /// Trainable parameter counts of Rank-R and fully connected networks.
    ParamTable(ParamTableArgs),
    /// Rewrite a fully connected network as an equivalent Rank-R network.
    ConvertFcfnn(ConvertArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic labelled patch file.
    SynthData(SynthArgs),
    /// Add per-band scaled Gaussian noise to a patch file.
    Noise(NoiseArgs),
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse().map_err(|e: rankr_core::model::ModelError| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: rankr_core::training::TrainError| e.to_string())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = 75)]
    pub hidden: usize,
    #[arg(long, default_value = "sigmoid", value_parser = parse_activation)]
    pub activation: Activation,
    /// Seed of the weight initialisation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    fn config(&self, data: &LabeledPatchSet) -> CliResult<ModelConfig> {
        let shape = data
            .patch_shape()
            .ok_or_else(|| CliError::Validation("the patch file holds no samples".into()))?;
        Ok(ModelConfig {
            input_shape: shape.to_vec(),
            rank: self.rank,
            hidden: self.hidden,
            classes: data.classes(),
            activation: self.activation,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training patch file.
    #[arg(long)]
    pub data: PathBuf,
    /// Patch file evaluated after every epoch.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Stop when the loss changes by less than this between epochs.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value = "alternating", value_parser = parse_mode)]
    pub mode: TrainMode,
    /// Where the trained model is written.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Writes `index,label,predicted` rows.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Cube header file; synthetic data is used when absent.
    #[arg(long)]
    pub cube: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 42)]
    pub synth_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "5,5,8")]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 80)]
    pub n_per_class: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 75)]
    pub hidden: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 10)]
    pub alpha: usize,
    /// Noise standard deviation as a fraction of each band's spread.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, value_delimiter = ',', default_value = "50,500")]
    pub checkpoints: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    #[arg(long, default_value = "sigmoid", value_parser = parse_activation)]
    pub activation: Activation,
    #[arg(long, default_value = "alternating", value_parser = parse_mode)]
    pub mode: TrainMode,
    /// Directory receiving epochs.csv and aggregate.csv.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

impl ExperimentArgs {
    pub fn spec(&self) -> ExperimentSpec {
        let data = match &self.cube {
            Some(path) => DataSpec::Cube {
                path: absolute(path),
                patch_size: self.patch_size,
            },
            None => DataSpec::Synth {
                seed: self.synth_seed,
                shape: self.shape.clone(),
                classes: self.classes,
                n_per_class: self.n_per_class,
            },
        };
        ExperimentSpec {
            data,
            ranks: self.ranks.clone(),
            hidden: self.hidden,
            alpha: self.alpha,
            noise: self.noise,
            runs: self.runs,
            checkpoints: self.checkpoints.clone(),
            base_seed: self.base_seed,
            learning_rate: self.lr,
            tol: self.tol,
            activation: self.activation,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Result directory of the first model.
    #[arg(long)]
    pub a: PathBuf,
    /// Result directory of the second model.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha_sig: f64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamTableArgs {
    #[arg(long, default_value_t = 75)]
    pub hidden: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub ranks: Vec<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Dense network file; a random network is drawn when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Input tensor shape, e.g. 4,4,5.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value = "sigmoid", value_parser = parse_activation)]
    pub activation: Activation,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random inputs on which both networks are compared; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    pub verify: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "5,5,8")]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 60)]
    pub n_per_class: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a held-out set drawn from the same task.
    #[arg(long, requires = "held_out_per_class")]
    pub held_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub held_out_per_class: usize,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Parses `argv`, applying `--config` defaults beneath explicit flags.
pub fn parse_args(argv: &[String]) -> Result<Cli, clap::Error> {
    let mut cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let scan = config::scan(argv);
    let mut argv = argv.to_vec();
    if let (Some(path), Some(at)) = (scan.config, scan.subcommand) {
        let name = argv[at].clone();
        let fail = |msg: String| cmd.clone().error(clap::error::ErrorKind::ValueValidation, msg);
        let entries = config::load(Path::new(&path)).map_err(fail)?;
        if let Some(sub) = cmd.find_subcommand(&name) {
            let mut known = Vec::new();
            let mut switches = Vec::new();
            for a in sub.get_arguments() {
                if let Some(long) = a.get_long() {
                    known.push(long.to_string());
                    if !a.get_action().takes_values() {
                        switches.push(long.to_string());
                    }
                }
            }
            let extra = config::to_args(&entries, &known, &switches).map_err(fail)?;
            argv.splice(at + 1..at + 1, extra);
        }
    }
    let matches = cmd.try_get_matches_from_mut(argv)?;
    Cli::from_arg_matches(&matches).map_err(|e| e.format(&mut cmd))
}

/// Runs a parsed command line and returns its exit code.
pub fn run(cli: Cli) -> i32 {
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return EXIT_RUNTIME;
        }
    };
    match rt.block_on(execute(cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

async fn connect(server: Option<String>) -> CliResult<Client> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let (addr, _) = rankr_service::spawn(([127, 0, 0, 1], 0).into())
                .await
                .map_err(|e| CliError::Runtime(format!("cannot start embedded service: {e}")))?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn inline(set: &LabeledPatchSet) -> DatasetRef {
    DatasetRef::Inline {
        patches: encode(&io::patches_to_bytes(set)),
    }
}

fn decoded(text: &str) -> CliResult<Vec<u8>> {
    decode(text).map_err(|e| CliError::Runtime(format!("service returned bad base64: {e}")))
}

fn checked_positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("--{name} must be positive, got {v}")))
    }
}

pub async fn execute(cli: Cli) -> CliResult<()> {
    let client = connect(cli.server).await?;
    match cli.command {
        Command::Train(a) => train(&client, a).await,
        Command::Eval(a) => eval(&client, a).await,
        Command::Experiment(a) => experiment(&client, a).await,
        Command::Compare(a) => compare(&client, a).await,
        Command::ParamTable(a) => {
            let r = client
                .param_table(&ParamTableRequest {
                    hidden: a.hidden,
                    ranks: a.ranks,
                    configs: None,
                })
                .await?;
            emit(&r.csv, a.out.as_deref())
        }
        Command::ConvertFcfnn(a) => convert(&client, a).await,
        Command::Gradcheck(a) => gradcheck(&client, a).await,
        Command::SynthData(a) => {
            let r = client
                .synth_data(&SynthRequest {
                    seed: a.seed,
                    shape: a.shape,
                    classes: a.classes,
                    n_per_class: a.n_per_class,
                    held_out_per_class: if a.held_out.is_some() { a.held_out_per_class } else { 0 },
                })
                .await?;
            let s = &r.samples;
            write_file(&a.out, &decoded(&s.patches)?)?;
            println!("wrote {} samples of {} classes to {}", s.count, s.classes, a.out.display());
            if let (Some(path), Some(h)) = (&a.held_out, &r.held_out) {
                write_file(path, &decoded(&h.patches)?)?;
                println!("wrote {} held-out samples to {}", h.count, path.display());
            }
            Ok(())
        }
        Command::Noise(a) => {
            let set = io::load_patches(&a.data)?;
            let r = client
                .noise(&NoiseRequest {
                    data: inline(&set),
                    level: a.level,
                    seed: a.seed,
                })
                .await?;
            write_file(&a.out, &decoded(&r.patches)?)?;
            println!("wrote {} noisy samples to {}", r.count, a.out.display());
            Ok(())
        }
    }
}

async fn train(client: &Client, a: TrainArgs) -> CliResult<()> {
    let data = io::load_patches(&a.data)?;
    let test = a.test.as_deref().map(io::load_patches).transpose()?;
    let r = client
        .train(&TrainRequest {
            model: a.model.config(&data)?,
            train: TrainConfig {
                learning_rate: a.lr,
                max_epochs: a.epochs,
                tol: a.tol,
                mode: a.mode,
            },
            train_data: inline(&data),
            test_data: test.as_ref().map(inline),
        })
        .await?;
    write_file(&a.out, &decoded(&r.model)?)?;
    if let Some(log) = &a.log {
        let mut csv = String::from("epoch,train_nll,train_acc,test_acc\n");
        for e in &r.epochs {
            let test = e.test_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{}", e.epoch, e.train_nll, e.train_accuracy, test);
        }
        write_file(log, csv.as_bytes())?;
    }
    let last = r.epochs.last();
    println!(
        "trained {} parameters for {} epochs in {} ms; train nll {}, train accuracy {}{}",
        r.param_count,
        r.epochs.len(),
        r.elapsed_ms,
        last.map_or(f64::NAN, |e| e.train_nll),
        last.map_or(f64::NAN, |e| e.train_accuracy),
        last.and_then(|e| e.test_accuracy)
            .map(|t| format!(", test accuracy {t}"))
            .unwrap_or_default()
    );
    Ok(())
}

async fn eval(client: &Client, a: EvalArgs) -> CliResult<()> {
    let model = std::fs::read(&a.model).map_err(|e| CliError::Runtime(format!("{}: {e}", a.model.display())))?;
    let data = io::load_patches(&a.data)?;
    let r = client
        .eval(&EvalRequest {
            model: ModelRef::Inline { model: encode(&model) },
            data: inline(&data),
        })
        .await?;
    if let Some(path) = &a.predictions {
        let mut csv = String::from("index,label,predicted\n");
        for (i, (label, pred)) in data.labels().iter().zip(&r.predictions).enumerate() {
            let _ = writeln!(csv, "{i},{label},{pred}");
        }
        write_file(path, csv.as_bytes())?;
    }
    println!("samples {}\nnll {}\naccuracy {}", r.count, r.nll, r.accuracy);
    Ok(())
}

async fn experiment(client: &Client, a: ExperimentArgs) -> CliResult<()> {
    let r = client.experiment(&a.spec()).await?;
    eprint!("{}", r.banner);
    write_file(&a.out.join("epochs.csv"), r.epochs_csv.as_bytes())?;
    write_file(&a.out.join("aggregate.csv"), r.aggregate_csv.as_bytes())?;
    print!("{}", r.aggregate_csv);
    Ok(())
}

/// Checkpoints listed in an aggregate CSV, in order of appearance.
fn checkpoints_of(aggregate_csv: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for line in aggregate_csv.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cp = line
            .split(',')
            .nth(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Validation(format!("malformed aggregate row `{line}`")))?;
        if !out.contains(&cp) {
            out.push(cp);
        }
    }
    Ok(out)
}

async fn compare(client: &Client, a: CompareArgs) -> CliResult<()> {
    let load = |dir: &Path| -> CliResult<_> {
        let cps = checkpoints_of(&read_text(&dir.join("aggregate.csv"))?)?;
        aggregate_from_epochs_csv(&read_text(&dir.join("epochs.csv"))?, &cps)
            .map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))
    };
    let r = client
        .compare(&CompareRequest {
            a: load(&a.a)?,
            b: load(&a.b)?,
            alpha_sig: a.alpha_sig,
        })
        .await?;
    emit(&r.csv, a.out.as_deref())
}

async fn convert(client: &Client, a: ConvertArgs) -> CliResult<()> {
    let source = match &a.input {
        Some(path) => FcfnnSource::Inline {
            fcfnn: encode(&io::fcfnn_to_bytes(&io::load_fcfnn(path)?)),
        },
        None => FcfnnSource::Random {
            hidden: a.hidden,
            classes: a.classes,
            activation: a.activation,
            seed: a.seed,
        },
    };
    let r = client
        .convert_fcfnn(&ConvertRequest {
            source,
            shape: a.shape,
            verify_trials: a.verify,
            verify_seed: a.seed,
            threshold: a.threshold,
        })
        .await?;
    write_file(&a.out, &decoded(&r.model)?)?;
    println!(
        "rank {}; dense parameters {}, rank-R parameters {}",
        r.rank, r.fcfnn_params, r.rankr_params
    );
    if let Some(rep) = r.report {
        println!(
            "max output gap {:e} over {} inputs (threshold {:e})",
            rep.max_abs_gap, rep.trials, rep.threshold
        );
        if !rep.pass {
            return Err(CliError::Runtime("converted network does not reproduce the original".into()));
        }
    }
    Ok(())
}

async fn gradcheck(client: &Client, a: GradcheckArgs) -> CliResult<()> {
    checked_positive("tolerance", a.tolerance)?;
    let data = io::load_patches(&a.data)?;
    let r = client
        .gradcheck(&GradcheckRequest {
            model: a.model.config(&data)?,
            data: inline(&data),
            step: a.step,
        })
        .await?;
    println!(
        "step {:e}\nfactor gradients: max relative error {:e}\noutput gradients: max relative error {:e}",
        r.step, r.result.max_factor_rel_error, r.result.max_output_rel_error
    );
    let worst = r.result.max_factor_rel_error.max(r.result.max_output_rel_error);
    if worst > a.tolerance {
        return Err(CliError::Runtime(format!(
            "relative error {worst:e} exceeds tolerance {:e}",
            a.tolerance
        )));
    }
    Ok(())
}
