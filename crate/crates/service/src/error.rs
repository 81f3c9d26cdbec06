use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    NotFound(String),

    #[error("session is {0}, not active")]
    NotActive(&'static str),

    #[error("proposal token does not match the current proposal")]
    StaleProposal,

    #[error("no observation to undo")]
    NothingToUndo,

    #[error("session `{0}` already exists")]
    AlreadyExists(String),

    #[error("{message}")]
    Invalid { field: Option<String>, message: String },

    #[error("malformed request body: {0}")]
    BadRequest(String),

    #[error("missing or invalid bearer token")]
    Unauthorized,

    #[error(transparent)]
    Engine(#[from] ibrm_core::Error),

    #[error("{}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {message}", path.display())]
    CorruptLog { path: PathBuf, line: usize, message: String },
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

impl ServiceError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError::Invalid {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NotActive(_) => "not_active",
            ServiceError::StaleProposal => "stale_proposal",
            ServiceError::NothingToUndo => "nothing_to_undo",
            ServiceError::AlreadyExists(_) => "already_exists",
            ServiceError::Invalid { .. } => "invalid_request",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Engine(e) => engine_code(e),
            ServiceError::Storage { .. } => "storage_error",
            ServiceError::CorruptLog { .. } => "corrupt_log",
        }
    }

    pub fn field(&self) -> Option<String> {
        match self {
            ServiceError::StaleProposal => Some("proposal_token".into()),
            ServiceError::Invalid { field, .. } => field.clone(),
            ServiceError::Engine(e) => engine_field(e).map(String::from),
            _ => None,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotActive(_)
            | ServiceError::StaleProposal
            | ServiceError::NothingToUndo
            | ServiceError::AlreadyExists(_) => StatusCode::CONFLICT,
            ServiceError::Invalid { .. } | ServiceError::Engine(_) | ServiceError::CorruptLog { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Storage { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            field: self.field(),
        }
    }
}

fn root(e: &ibrm_core::Error) -> &ibrm_core::Error {
    match e {
        ibrm_core::Error::AtStep { source, .. } => root(source),
        e => e,
    }
}

fn engine_code(e: &ibrm_core::Error) -> &'static str {
    use ibrm_core::Error::*;
    match root(e) {
        InvalidConfig { .. } => "invalid_config",
        InvalidObservation(_) => "invalid_observation",
        ModeMismatch { .. } => "mode_mismatch",
        OutOfRange { .. } => "out_of_range",
        _ => "engine_error",
    }
}

fn engine_field(e: &ibrm_core::Error) -> Option<&'static str> {
    use ibrm_core::Error::*;
    match root(e) {
        InvalidConfig { field, .. } => Some(field),
        InvalidObservation(_) | ModeMismatch { .. } => Some("value"),
        _ => None,
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
