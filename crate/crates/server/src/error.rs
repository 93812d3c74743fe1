use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cprism_core::dataset::DatasetError;
use cprism_core::discovery::DiscoveryError;
use cprism_core::estimate::EstimateError;
use cprism_core::matching::MatchingError;
use serde_json::json;

/// An error response: `{"error": code, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

impl From<cprism_core::Error> for ApiError {
    fn from(err: cprism_core::Error) -> Self {
        use cprism_core::Error as E;
        let message = err.to_string();
        match err {
            E::Estimate(EstimateError::NotIdentifiable { .. }) => Self::unprocessable("not_identifiable", message),
            E::Dataset(
                DatasetError::UnknownCovariate(_)
                | DatasetError::UnknownValue { .. }
                | DatasetError::InvalidAtom { .. }
                | DatasetError::NothingToMerge
                | DatasetError::CannotSplit(_)
                | DatasetError::DimensionMismatch { .. },
            ) => Self::unprocessable("invalid_subgroup", message),
            E::Dataset(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_dataset", message),
            E::Discovery(DiscoveryError::InvalidParams(_)) => Self::new(StatusCode::BAD_REQUEST, "invalid_params", message),
            E::Matching(MatchingError::EmptyArm { .. }) => Self::unprocessable("empty_arm", message),
            E::Matching(MatchingError::InvalidEpsilon(_) | MatchingError::InvalidBinWidth(_)) => Self::bad_request(message),
            _ => Self::unprocessable("unprocessable", message),
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(err: DatasetError) -> Self {
        cprism_core::Error::from(err).into()
    }
}

impl From<MatchingError> for ApiError {
    fn from(err: MatchingError) -> Self {
        cprism_core::Error::from(err).into()
    }
}
