use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use caremesh_core::CoordError;
use serde::Serialize;

/// Structured error body: `{"code":"...","message":"..."}`. Codes from the
/// coordinator pass through verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "Unauthorized",
            "missing or unknown bearer token",
        )
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "Forbidden", message)
    }

    pub fn admin_only() -> Self {
        Self::new(
            StatusCode::FORBIDDEN,
            "AdminOnly",
            "this endpoint needs the admin token",
        )
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MalformedBody", message)
    }

    pub fn not_ready() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "NotReady",
            "the event log is still being replayed",
        )
    }

    pub fn shutting_down() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "ShuttingDown",
            "the server is stopping",
        )
    }
}

/// HTTP status for a coordinator error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        c if c.starts_with("Unknown") => StatusCode::NOT_FOUND,
        "DuplicateResponse" | "SessionClosed" | "GoalAlreadyReached" | "CodeCollision"
        | "TaskNotActive" => StatusCode::CONFLICT,
        "NotCircleMember" | "NotAnApprover" | "NotTaskOwner" | "InactiveParticipant" => {
            StatusCode::FORBIDDEN
        }
        "StorageFailure" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<CoordError> for ApiError {
    fn from(e: CoordError) -> Self {
        let code = e.code();
        Self::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = caremesh_core::canonical::to_string(&self).unwrap_or_default();
        (
            self.status,
            [(header::CONTENT_TYPE, "application/json")],
            body,
        )
            .into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflicts_and_validation() {
        assert_eq!(status_for("DuplicateResponse"), StatusCode::CONFLICT);
        assert_eq!(status_for("SessionClosed"), StatusCode::CONFLICT);
        assert_eq!(status_for("GoalAlreadyReached"), StatusCode::CONFLICT);
        assert_eq!(status_for("RoleMismatch"), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(status_for("InvalidSpec"), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(status_for("UnknownTask"), StatusCode::NOT_FOUND);
    }

    #[test]
    fn body_is_canonical() {
        let e = ApiError::from(CoordError::NoRecipients);
        let body = caremesh_core::canonical::to_string(&e).unwrap();
        assert_eq!(
            body,
            r#"{"code":"NoRecipients","message":"notification has no recipients"}"#
        );
    }
}
