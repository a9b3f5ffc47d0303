use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rankr_api::*;
use rankr_core::io::{patches_from_bytes, save_cube};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(path);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn post<T: DeserializeOwned>(app: &Router, path: &str, body: Value) -> T {
    let (status, bytes) = call(app, Method::POST, path, Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn post_err(app: &Router, path: &str, body: Value) -> (StatusCode, ErrorBody) {
    let (status, bytes) = call(app, Method::POST, path, Some(body)).await;
    assert_ne!(status, StatusCode::OK);
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn synth_ref(seed: u64, n: usize) -> Value {
    json!({"kind": "synth", "seed": seed, "shape": [3, 3, 4], "classes": 3, "n_per_class": n})
}

fn model_cfg(seed: u64) -> Value {
    json!({"input_shape": [3, 3, 4], "rank": 2, "hidden": 4, "classes": 3, "seed": seed})
}

#[tokio::test]
async fn health_reports_ok() {
    let app = rankr_service::router();
    let (status, bytes) = call(&app, Method::GET, "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(h.status, "ok");
}

#[tokio::test]
async fn param_table_defaults_to_benchmark_shapes() {
    let app = rankr_service::router();
    let r: ParamTableResponse = post(&app, "/v1/param-table", json!({})).await;
    assert_eq!(r.rows.len(), 18);
    assert!(r.csv.contains("pavia_university,5x5x103,9,rank_1,9150,"));
    let (status, e) = post_err(&app, "/v1/param-table", json!({"ranks": [0]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(e.kind, ErrorKind::Validation);
}

#[tokio::test]
async fn train_store_fetch_evaluate_delete() {
    let app = rankr_service::router();
    let r: TrainResponse = post(
        &app,
        "/v1/train",
        json!({
            "model": model_cfg(1),
            "train": {"max_epochs": 20, "tol": 0.0},
            "train_data": synth_ref(4, 10),
            "test_data": synth_ref(4, 5),
        }),
    )
    .await;
    assert_eq!(r.epochs.len(), 20);
    assert_eq!(r.param_count, 4 * 2 * 10 + 4 * 3);

    let (status, bytes) = call(&app, Method::GET, &format!("/v1/models/{}", r.model_id), None).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelInfo = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(info.model, r.model);

    let by_id: EvalResponse = post(
        &app,
        "/v1/eval",
        json!({"model": {"kind": "id", "id": r.model_id}, "data": synth_ref(4, 10)}),
    )
    .await;
    let inline: EvalResponse = post(
        &app,
        "/v1/eval",
        json!({"model": {"kind": "inline", "model": r.model}, "data": synth_ref(4, 10)}),
    )
    .await;
    assert_eq!(by_id, inline);
    assert_eq!(by_id.count, 30);
    assert_eq!(by_id.accuracy, r.epochs.last().unwrap().train_accuracy);

    let path = format!("/v1/models/{}", r.model_id);
    assert_eq!(call(&app, Method::DELETE, &path, None).await.0, StatusCode::OK);
    assert_eq!(call(&app, Method::GET, &path, None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests_are_validation_errors() {
    let app = rankr_service::router();
    let (status, bytes) = call(
        &app,
        Method::POST,
        "/v1/train",
        Some(json!({"model": "nonsense"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let e: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(e.kind, ErrorKind::Validation);

    let (status, _) = post_err(
        &app,
        "/v1/train",
        json!({"model": model_cfg(1), "train": {"learning_rate": -1.0}, "train_data": synth_ref(1, 2)}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn divergence_is_a_runtime_error() {
    let app = rankr_service::router();
    let (status, e) = post_err(
        &app,
        "/v1/train",
        json!({
            "model": {"input_shape": [3, 3, 4], "rank": 2, "hidden": 4, "classes": 3, "activation": "sigmoid", "seed": 2},
            "train": {"learning_rate": 1e308, "max_epochs": 5, "mode": "joint"},
            "train_data": synth_ref(1, 5),
        }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e.kind, ErrorKind::Runtime);
    assert!(e.message.contains("diverged"), "{}", e.message);
}

#[tokio::test]
async fn synth_noise_and_cube_datasets() {
    let app = rankr_service::router();
    let r: SynthResponse = post(
        &app,
        "/v1/synth-data",
        json!({"seed": 3, "shape": [3, 3, 4], "classes": 3, "n_per_class": 7, "held_out_per_class": 2}),
    )
    .await;
    let s = r.samples;
    assert_eq!((s.count, s.classes), (21, 3));
    let (a, b) = rankr_core::data::synth_train_test(3, 7, 2, &[3, 3, 4], 3).unwrap();
    assert_eq!(s.patches, encode(&rankr_core::io::patches_to_bytes(&a)));
    assert_eq!(r.held_out.unwrap().patches, encode(&rankr_core::io::patches_to_bytes(&b)));
    let clean = patches_from_bytes(&decode(&s.patches).unwrap()).unwrap();

    let same: PatchSetResponse = post(
        &app,
        "/v1/noise",
        json!({"data": {"kind": "inline", "patches": s.patches}, "level": 0.0, "seed": 1}),
    )
    .await;
    assert_eq!(same.patches, s.patches);
    let noisy: PatchSetResponse = post(
        &app,
        "/v1/noise",
        json!({"data": {"kind": "inline", "patches": s.patches}, "level": 0.2, "seed": 1}),
    )
    .await;
    let noisy = patches_from_bytes(&decode(&noisy.patches).unwrap()).unwrap();
    assert_eq!(noisy.labels(), clean.labels());
    assert_ne!(noisy, clean);
    let (status, _) = post_err(
        &app,
        "/v1/noise",
        json!({"data": {"kind": "inline", "patches": "@@"}, "level": 0.2, "seed": 1}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let dir = tempfile::tempdir().unwrap();
    let cube = rankr_core::data::synth_cube(2, 8, 8, 3, 2).unwrap();
    let path = dir.path().join("scene.hdr");
    save_cube(&cube, &path).unwrap();
    let labelled = cube.labels().iter().filter(|&&l| l != 0).count();
    let r: EvalResponse = post(
        &app,
        "/v1/eval",
        json!({
            "model": {"kind": "inline", "model": encode(&rankr_core::io::model_to_bytes(
                &rankr_core::training::init_weights(&serde_json::from_value(
                    json!({"input_shape": [5, 5, 3], "rank": 1, "hidden": 2, "classes": 2})
                ).unwrap()).unwrap()))},
            "data": {"kind": "cube", "path": path, "patch_size": 5},
        }),
    )
    .await;
    assert_eq!(r.count, labelled);
    let (status, e) = post_err(
        &app,
        "/v1/synth-data",
        json!({"seed": 3, "shape": [3, 3], "classes": 1, "n_per_class": 7}),
    )
    .await;
    assert_eq!((status, e.kind), (StatusCode::BAD_REQUEST, ErrorKind::Validation));
    let (status, e) = post_err(
        &app,
        "/v1/noise",
        json!({"data": {"kind": "cube", "path": dir.path().join("missing.hdr"), "patch_size": 5}, "level": 0.1, "seed": 0}),
    )
    .await;
    assert_eq!((status, e.kind), (StatusCode::UNPROCESSABLE_ENTITY, ErrorKind::Runtime));
}

#[tokio::test]
async fn conversion_preserves_outputs() {
    let app = rankr_service::router();
    let r: ConvertResponse = post(
        &app,
        "/v1/convert-fcfnn",
        json!({
            "source": {"kind": "random", "hidden": 3, "classes": 4, "seed": 9},
            "shape": [2, 3, 4],
            "verify_trials": 200,
        }),
    )
    .await;
    assert_eq!(r.rank, 6);
    assert_eq!(r.fcfnn_params, 3 * 24 + 12);
    assert!(r.report.unwrap().pass);
    let (status, _) = post_err(
        &app,
        "/v1/convert-fcfnn",
        json!({"source": {"kind": "random", "hidden": 3, "classes": 4, "seed": 9}, "shape": [24]}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn gradcheck_experiment_and_compare() {
    let app = rankr_service::router();
    let g: GradcheckResponse = post(
        &app,
        "/v1/gradcheck",
        json!({"model": model_cfg(5), "data": synth_ref(2, 2)}),
    )
    .await;
    assert!(g.result.max_factor_rel_error <= 1e-4);
    assert!(g.result.max_output_rel_error <= 1e-4);

    let spec = json!({
        "data": {"kind": "synth", "seed": 1, "shape": [3, 3, 4], "classes": 2, "n_per_class": 8},
        "ranks": [1, 2], "hidden": 3, "alpha": 3, "runs": 3, "checkpoints": [2, 4],
    });
    let a: ExperimentResponse = post(&app, "/v1/experiment", spec.clone()).await;
    let b: ExperimentResponse = post(&app, "/v1/experiment", spec).await;
    assert_eq!(a.epochs_csv, b.epochs_csv);
    assert_eq!(a.aggregate_csv.lines().count(), 1 + 2 * 2);
    assert_eq!(a.epochs_csv.lines().count(), 1 + 2 * 3 * 4);
    assert!(a.banner.contains("rank 1: "));

    let c: CompareResponse = post(
        &app,
        "/v1/compare",
        json!({"a": a.aggregate, "b": b.aggregate}),
    )
    .await;
    assert_eq!(c.rows.len(), 4);
    assert!(c.rows.iter().all(|r| !r.reject));
    assert!(c.csv.starts_with("rank,checkpoint,p_welch,p_mwu,reject_5pct\n"));
}
