use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use provbase::Error as CoreError;

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },
    #[error("transport error: {0}")]
    Transport(String),
}

/// Uniform error body of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl GatewayError {
    pub fn code(&self) -> &str {
        match self {
            GatewayError::Core(e) => e.code(),
            GatewayError::PortInUse(_) => "PortInUse",
            GatewayError::Unauthorized => "Unauthorized",
            GatewayError::BadRequest(_) => "BadRequest",
            GatewayError::UnknownActor(_) => "UnknownActor",
            GatewayError::NotFound(_) => "NotFound",
            GatewayError::Remote { code, .. } => code,
            GatewayError::Transport(_) => "Transport",
        }
    }

    pub fn status(&self) -> StatusCode {
        use CoreError::*;
        match self {
            GatewayError::Core(e) => match e {
                UnknownItem(_)
                | UnknownDescription(_)
                | UnknownPipeline(_)
                | UnknownVersion { .. }
                | UnknownDataset(_)
                | UnknownAnalysis(_)
                | UnknownJob(_)
                | UnknownNode(_)
                | UnknownTarget(_) => StatusCode::NOT_FOUND,
                NotVisible(_) | NotOwner(_) => StatusCode::FORBIDDEN,
                IllegalTransition(_)
                | AlreadyRunning(_)
                | ElementsStillRunning(_)
                | StepAlreadyDispatched(_)
                | NotTerminal(_) => StatusCode::CONFLICT,
                ValidationFailed(_)
                | EmptyElement(_)
                | ElementNotInDataset(_)
                | MissingRequiredParam(_)
                | InvalidKind(_)
                | InvalidModification(_)
                | MalformedConstraint(_)
                | ParseError(_)
                | SeqBeforeCreation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                CorruptLog { .. } | Io(_) | Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
            GatewayError::PortInUse(_) | GatewayError::Transport(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            GatewayError::Unauthorized => StatusCode::UNAUTHORIZED,
            GatewayError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GatewayError::UnknownActor(_) => StatusCode::UNPROCESSABLE_ENTITY,
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::Remote { status, .. } => {
                StatusCode::from_u16(*status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
            }
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_owned(),
            message: self.to_string(),
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
