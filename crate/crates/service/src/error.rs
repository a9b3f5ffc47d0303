use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rankr_api::{ErrorBody, ErrorKind};
use rankr_core::data::DataError;
use rankr_core::equivalence::EquivalenceError;
use rankr_core::experiment::ExperimentError;
use rankr_core::io::FormatError;
use rankr_core::model::ModelError;
use rankr_core::stats::StatsError;
use rankr_core::training::TrainError;

/// A failed request: what went wrong and whose fault it was.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ServiceError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::NotFound,
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.kind {
            ErrorKind::Validation => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Runtime => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        let body = ErrorBody {
            kind: self.kind,
            message: self.message,
        };
        (status, Json(body)).into_response()
    }
}

fn with_kind(kind: ErrorKind, e: impl ToString) -> ServiceError {
    ServiceError {
        kind,
        message: e.to_string(),
    }
}

fn model_kind(e: &ModelError) -> ErrorKind {
    match e {
        ModelError::NonFiniteInput => ErrorKind::Runtime,
        _ => ErrorKind::Validation,
    }
}

fn data_kind(e: &DataError) -> ErrorKind {
    match e {
        DataError::InvalidCube(_) | DataError::Tensor(_) => ErrorKind::Runtime,
        _ => ErrorKind::Validation,
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        with_kind(model_kind(&e), e)
    }
}

impl From<DataError> for ServiceError {
    fn from(e: DataError) -> Self {
        with_kind(data_kind(&e), e)
    }
}

impl From<TrainError> for ServiceError {
    fn from(e: TrainError) -> Self {
        let kind = match &e {
            TrainError::Diverged { .. } => ErrorKind::Runtime,
            TrainError::Model(m) => model_kind(m),
            _ => ErrorKind::Validation,
        };
        with_kind(kind, e)
    }
}

/// Unreadable or malformed files are the environment's problem, not the
/// request's.
impl From<FormatError> for ServiceError {
    fn from(e: FormatError) -> Self {
        with_kind(ErrorKind::Runtime, e)
    }
}

impl From<EquivalenceError> for ServiceError {
    fn from(e: EquivalenceError) -> Self {
        with_kind(ErrorKind::Validation, e)
    }
}

impl From<StatsError> for ServiceError {
    fn from(e: StatsError) -> Self {
        with_kind(ErrorKind::Validation, e)
    }
}

impl From<ExperimentError> for ServiceError {
    fn from(e: ExperimentError) -> Self {
        let kind = match &e {
            ExperimentError::Invalid(_)
            | ExperimentError::ShapeMismatch(_)
            | ExperimentError::Stats(_) => ErrorKind::Validation,
            ExperimentError::Data(d) => data_kind(d),
            ExperimentError::Model(m) => model_kind(m),
            ExperimentError::Format(_) | ExperimentError::AllRunsFailed(_) => ErrorKind::Runtime,
        };
        with_kind(kind, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_is_a_runtime_failure() {
        let e: ServiceError = TrainError::Diverged {
            epoch: 3,
            loss: f64::NAN,
        }
        .into();
        assert_eq!(e.status(), StatusCode::UNPROCESSABLE_ENTITY);
        let e: ServiceError = TrainError::InvalidConfig("lr".into()).into();
        assert_eq!(e.status(), StatusCode::BAD_REQUEST);
    }

    #[test]
    fn bad_parameters_are_validation_failures() {
        let e: ServiceError = DataError::EvenPatchSize(4).into();
        assert_eq!(e.kind, ErrorKind::Validation);
        let e: ServiceError = ExperimentError::AllRunsFailed("x".into()).into();
        assert_eq!(e.kind, ErrorKind::Runtime);
    }
}
