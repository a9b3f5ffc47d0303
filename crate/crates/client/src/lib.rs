//! Async client for the rankr HTTP service.

use rankr_api::*;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{} ({status})", body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response ({status}): {text}")]
    Unexpected { status: StatusCode, text: String },
}

impl ClientError {
    /// True when the request itself was at fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ClientError::Api { body, .. } if matches!(body.kind, ErrorKind::Validation | ErrorKind::NotFound)
        )
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{API_PREFIX}{path}", self.base)
    }

    async fn read<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Unexpected {
                status,
                text: format!("{e}: {}", String::from_utf8_lossy(&bytes)),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Unexpected {
                status,
                text: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(self.url(path)).json(body).send().await?;
        Self::read(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        Self::read(self.http.get(self.url("/health")).send().await?).await
    }

    pub async fn param_table(&self, req: &ParamTableRequest) -> Result<ParamTableResponse, ClientError> {
        self.post("/param-table", req).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainResponse, ClientError> {
        self.post("/train", req).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse, ClientError> {
        self.post("/eval", req).await
    }

    pub async fn experiment(&self, req: &ExperimentRequest) -> Result<ExperimentResponse, ClientError> {
        self.post("/experiment", req).await
    }

    pub async fn compare(&self, req: &CompareRequest) -> Result<CompareResponse, ClientError> {
        self.post("/compare", req).await
    }

    pub async fn convert_fcfnn(&self, req: &ConvertRequest) -> Result<ConvertResponse, ClientError> {
        self.post("/convert-fcfnn", req).await
    }

    pub async fn gradcheck(&self, req: &GradcheckRequest) -> Result<GradcheckResponse, ClientError> {
        self.post("/gradcheck", req).await
    }

    pub async fn synth_data(&self, req: &SynthRequest) -> Result<SynthResponse, ClientError> {
        self.post("/synth-data", req).await
    }

    pub async fn noise(&self, req: &NoiseRequest) -> Result<PatchSetResponse, ClientError> {
        self.post("/noise", req).await
    }

    pub async fn model(&self, id: &str) -> Result<ModelInfo, ClientError> {
        Self::read(self.http.get(self.url(&format!("/models/{id}"))).send().await?).await
    }

    pub async fn delete_model(&self, id: &str) -> Result<(), ClientError> {
        let resp = self.http.delete(self.url(&format!("/models/{id}"))).send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(());
        }
        Self::read::<()>(resp).await
    }
}
