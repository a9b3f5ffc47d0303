//! HTTP front end for Rank-R network training, conversion and analysis.
//!
//! Every operation is a JSON `POST` under `/v1`. Numeric work runs on the
//! blocking thread pool so slow requests never stall the reactor.

mod error;

pub use error::ServiceError;

use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use rankr_api::*;
use rankr_core::data::{add_noise, extract_patches, synth, LabeledPatchSet, SynthTask};
use rankr_core::equivalence::{fcfnn_to_rankr, verify_equivalence, Fcfnn};
use rankr_core::experiment::{
    benchmark_shapes, compare_models, comparison_csv, param_table, param_table_csv, run_experiment,
};
use rankr_core::io::{
    fcfnn_from_bytes, load_cube, load_patches, model_from_bytes, model_to_bytes, patches_from_bytes,
    patches_to_bytes,
};
use rankr_core::model::Family;
use rankr_core::training::{self, evaluate, gradient_check, init_weights, EpochStats};
use rankr_core::RankRModel;
use serde::de::DeserializeOwned;
use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// Largest accepted request body; inline patch sets can be large.
pub const BODY_LIMIT: usize = 512 * 1024 * 1024;

/// Models produced by `train` and `convert-fcfnn`, keyed by id.
#[derive(Default)]
pub struct AppState {
    models: RwLock<HashMap<String, RankRModel>>,
    next_id: AtomicU64,
}

impl AppState {
    fn insert(&self, model: RankRModel) -> String {
        let id = format!("m{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        self.models
            .write()
            .expect("model registry poisoned")
            .insert(id.clone(), model);
        id
    }

    fn get(&self, id: &str) -> Result<RankRModel, ServiceError> {
        self.models
            .read()
            .expect("model registry poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found(format!("no model with id `{id}`")))
    }

    fn remove(&self, id: &str) -> Result<(), ServiceError> {
        self.models
            .write()
            .expect("model registry poisoned")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ServiceError::not_found(format!("no model with id `{id}`")))
    }
}

type Shared = Arc<AppState>;
type Reply<T> = Result<Json<T>, ServiceError>;

/// JSON body whose parse failures are reported as validation errors.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ServiceError::validation(e.body_text())),
        }
    }
}

pub fn router() -> Router {
    router_with_state(Arc::default())
}

pub fn router_with_state(state: Shared) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/param-table", post(param_table_handler))
        .route("/v1/train", post(train_handler))
        .route("/v1/eval", post(eval_handler))
        .route("/v1/experiment", post(experiment_handler))
        .route("/v1/compare", post(compare_handler))
        .route("/v1/convert-fcfnn", post(convert_handler))
        .route("/v1/gradcheck", post(gradcheck_handler))
        .route("/v1/synth-data", post(synth_handler))
        .route("/v1/noise", post(noise_handler))
        .route("/v1/models/{id}", get(get_model).delete(delete_model))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener))))
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::runtime(format!("worker failed: {e}")))?
}

fn load_dataset(d: &DatasetRef) -> Result<LabeledPatchSet, ServiceError> {
    Ok(match d {
        DatasetRef::Inline { patches } => {
            let bytes = decode(patches)
                .map_err(|e| ServiceError::validation(format!("patches are not base64: {e}")))?;
            patches_from_bytes(&bytes)
                .map_err(|e| ServiceError::validation(format!("inline patches: {e}")))?
        }
        DatasetRef::PatchFile { path } => load_patches(path)?,
        DatasetRef::Cube { path, patch_size } => extract_patches(&load_cube(path)?, *patch_size)?,
        DatasetRef::Synth {
            seed,
            shape,
            classes,
            n_per_class,
        } => synth(*seed, *n_per_class, shape, *classes)?,
    })
}

fn resolve_model(state: &AppState, m: &ModelRef) -> Result<RankRModel, ServiceError> {
    match m {
        ModelRef::Id { id } => state.get(id),
        ModelRef::Inline { model } => {
            let bytes = decode(model)
                .map_err(|e| ServiceError::validation(format!("model is not base64: {e}")))?;
            model_from_bytes(&bytes).map_err(|e| ServiceError::validation(format!("inline model: {e}")))
        }
    }
}

fn patch_response(set: &LabeledPatchSet) -> PatchSetResponse {
    PatchSetResponse {
        count: set.len(),
        classes: set.classes(),
        patch_shape: set.patch_shape().map(<[usize]>::to_vec),
        patches: encode(&patches_to_bytes(set)),
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn param_table_handler(Body(req): Body<ParamTableRequest>) -> Reply<ParamTableResponse> {
    let configs = req.configs.unwrap_or_else(benchmark_shapes);
    let rows = param_table(&configs, req.hidden, &req.ranks)?;
    let csv = param_table_csv(&rows);
    Ok(Json(ParamTableResponse { rows, csv }))
}

async fn train_handler(State(state): State<Shared>, Body(req): Body<TrainRequest>) -> Reply<TrainResponse> {
    let (model, record) = blocking(move || {
        let train_set = load_dataset(&req.train_data)?;
        let test_set = req.test_data.as_ref().map(load_dataset).transpose()?;
        let mut model = init_weights(&req.model)?;
        let record = training::train(
            &mut model,
            &train_set,
            test_set.as_ref(),
            &req.train,
            &mut |s: &EpochStats| tracing::debug!(epoch = s.epoch, nll = s.train_nll, "epoch"),
        )?;
        Ok((model, record))
    })
    .await?;
    let bytes = model_to_bytes(&model);
    let param_count = model.param_count();
    let model_id = state.insert(model);
    Ok(Json(TrainResponse {
        model_id,
        model: encode(&bytes),
        param_count,
        epochs: record.epochs,
        elapsed_ms: record.elapsed.as_millis() as u64,
    }))
}

async fn eval_handler(State(state): State<Shared>, Body(req): Body<EvalRequest>) -> Reply<EvalResponse> {
    let model = resolve_model(&state, &req.model)?;
    let out = blocking(move || {
        let data = load_dataset(&req.data)?;
        let (nll, accuracy) = evaluate(&model, &data)?;
        let predictions = data
            .patches()
            .iter()
            .map(|x| model.predict(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EvalResponse {
            count: data.len(),
            nll,
            accuracy,
            predictions,
        })
    })
    .await?;
    Ok(Json(out))
}

async fn experiment_handler(Body(spec): Body<ExperimentRequest>) -> Reply<ExperimentResponse> {
    let out = blocking(move || Ok(run_experiment(&spec)?)).await?;
    for line in out.banner.lines().filter(|l| l.starts_with("warning")) {
        tracing::warn!("{line}");
    }
    Ok(Json(ExperimentResponse {
        banner: out.banner,
        param_counts: out.param_counts,
        aggregate: out.aggregate,
        epochs_csv: out.epochs_csv,
        aggregate_csv: out.aggregate_csv,
    }))
}

async fn compare_handler(Body(req): Body<CompareRequest>) -> Reply<CompareResponse> {
    if !(req.alpha_sig > 0.0 && req.alpha_sig < 1.0) {
        return Err(ServiceError::validation(format!(
            "significance level must lie in (0, 1), got {}",
            req.alpha_sig
        )));
    }
    let rows = compare_models(&req.a, &req.b, req.alpha_sig)?;
    let csv = comparison_csv(&rows);
    Ok(Json(CompareResponse { rows, csv }))
}

async fn convert_handler(State(state): State<Shared>, Body(req): Body<ConvertRequest>) -> Reply<ConvertResponse> {
    let (model, f, report) = blocking(move || {
        let f = match &req.source {
            FcfnnSource::Inline { fcfnn } => {
                let bytes = decode(fcfnn)
                    .map_err(|e| ServiceError::validation(format!("network is not base64: {e}")))?;
                fcfnn_from_bytes(&bytes)
                    .map_err(|e| ServiceError::validation(format!("inline network: {e}")))?
            }
            FcfnnSource::Random {
                hidden,
                classes,
                activation,
                seed,
            } => Fcfnn::random(req.shape.iter().product(), *hidden, *classes, *activation, *seed)?,
        };
        let model = fcfnn_to_rankr(&f, &req.shape)?;
        let report = match req.verify_trials {
            0 => None,
            n => Some(verify_equivalence(&f, &model, n, req.verify_seed, req.threshold)?),
        };
        Ok((model, f, report))
    })
    .await?;
    let bytes = model_to_bytes(&model);
    let rank = model.config().rank;
    let rankr_params = rankr_core::model::param_count(model.config(), Family::RankR);
    let model_id = state.insert(model);
    Ok(Json(ConvertResponse {
        model_id,
        model: encode(&bytes),
        rank,
        fcfnn_params: f.param_count(),
        rankr_params,
        report,
    }))
}

async fn gradcheck_handler(Body(req): Body<GradcheckRequest>) -> Reply<GradcheckResponse> {
    if !(req.step > 0.0 && req.step.is_finite()) {
        return Err(ServiceError::validation(format!("step must be positive, got {}", req.step)));
    }
    let result = blocking(move || {
        let data = load_dataset(&req.data)?;
        let model = init_weights(&req.model)?;
        Ok(gradient_check(&model, &data, req.step)?)
    })
    .await?;
    Ok(Json(GradcheckResponse {
        step: req.step,
        result,
    }))
}

async fn synth_handler(Body(req): Body<SynthRequest>) -> Reply<SynthResponse> {
    blocking(move || {
        let mut task = SynthTask::new(req.seed, &req.shape, req.classes)?;
        let samples = patch_response(&task.sample(req.n_per_class));
        let held_out = match req.held_out_per_class {
            0 => None,
            n => Some(patch_response(&task.sample(n))),
        };
        Ok(Json(SynthResponse { samples, held_out }))
    })
    .await
}

async fn noise_handler(Body(req): Body<NoiseRequest>) -> Reply<PatchSetResponse> {
    let set = blocking(move || {
        let set = load_dataset(&req.data)?;
        Ok(add_noise(&set, req.level, req.seed)?)
    })
    .await?;
    Ok(Json(patch_response(&set)))
}

async fn get_model(State(state): State<Shared>, Path(id): Path<String>) -> Reply<ModelInfo> {
    let model = state.get(&id)?;
    Ok(Json(ModelInfo {
        id,
        config: model.config().clone(),
        param_count: model.param_count(),
        model: encode(&model_to_bytes(&model)),
    }))
}

async fn delete_model(State(state): State<Shared>, Path(id): Path<String>) -> Result<(), ServiceError> {
    state.remove(&id)
}
