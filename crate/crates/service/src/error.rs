use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use wayfinder_core::evaluation::EvalError;
use wayfinder_core::localization::LocalizationError;
use wayfinder_core::map::{MapError, MapFormatError};
use wayfinder_core::navigation::NavigationError;

use crate::payload::PayloadError;

/// Error body returned by every endpoint. `code` values never change meaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
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

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(what: &str, id: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id} not found"))
    }

    pub fn version_conflict(expected: u64, current: u64) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "version_conflict",
            format!("edit targets version {expected}, map is at version {current}"),
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<PayloadError> for ApiError {
    fn from(e: PayloadError) -> Self {
        Self::bad_request("invalid_payload", e.to_string())
    }
}

impl From<MapError> for ApiError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::UnknownBoundary(_) | MapError::UnknownImage(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            MapError::DuplicateName(_) => Self::new(StatusCode::CONFLICT, "duplicate_name", e.to_string()),
            _ => Self::bad_request("invalid_edit", e.to_string()),
        }
    }
}

impl From<MapFormatError> for ApiError {
    fn from(e: MapFormatError) -> Self {
        match e {
            MapFormatError::Io { .. } => Self::internal(e.to_string()),
            _ => Self::bad_request("invalid_map", e.to_string()),
        }
    }
}

impl From<LocalizationError> for ApiError {
    fn from(e: LocalizationError) -> Self {
        match e {
            LocalizationError::Descriptor(_) => Self::bad_request("invalid_payload", e.to_string()),
            _ => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "localization_failed",
                format!("{e}; take another image"),
            ),
        }
    }
}

impl From<NavigationError> for ApiError {
    fn from(e: NavigationError) -> Self {
        match e {
            NavigationError::Unreachable { .. } | NavigationError::NoRoute => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unreachable", e.to_string())
            }
            NavigationError::UnknownDestination(_) | NavigationError::UnknownNode(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        Self::bad_request("invalid_sweep", e.to_string())
    }
}
