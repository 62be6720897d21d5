//! Endpoint handlers. Mutations go through the engine queue; queries and
//! stream setup take a read lock on the coordinator.

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::Router;
use caremesh_core::{
    canonical, CircleId, Command, Coordinator, NotificationId, ParticipantId, Role, TaskId,
    DEFAULT_MAX_BATCH,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::engine::{Engine, IdempotencyKey};
use crate::error::ApiError;
use crate::stream;
use crate::tokens::{Principal, TokenTable};
use crate::wire::{
    AckBody, ApprovalBody, CircleBody, MemberBody, NotificationBody, ParticipantBody, ReportBody,
    TaskBody, TaskPatchBody, IDEMPOTENCY_HEADER,
};

/// Largest batch a single poll may ask for.
const MAX_BATCH_CAP: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    tokens: TokenTable,
    engine: OnceLock<Arc<Engine>>,
    heartbeat: Duration,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    pub fn new(tokens: TokenTable, heartbeat: Duration, shutdown: watch::Receiver<bool>) -> Self {
        Self {
            inner: Arc::new(Shared {
                tokens,
                engine: OnceLock::new(),
                heartbeat,
                shutdown,
            }),
        }
    }

    /// Makes the service ready. Called once, after replay.
    pub fn install(&self, engine: Arc<Engine>) {
        let _ = self.inner.engine.set(engine);
    }

    fn engine(&self) -> Result<&Arc<Engine>, ApiError> {
        self.inner.engine.get().ok_or_else(ApiError::not_ready)
    }

    fn read<T>(&self, f: impl FnOnce(&Coordinator) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let core = self.engine()?.core().clone();
        let guard = core.read();
        f(&guard)
    }

    async fn run(
        &self,
        command: Command,
        caller: &Caller,
        headers: &HeaderMap,
    ) -> Result<Canonical, ApiError> {
        let key = match headers.get(IDEMPOTENCY_HEADER) {
            Some(v) => Some(IdempotencyKey {
                scope: caller.scope(),
                key: v
                    .to_str()
                    .map_err(|_| ApiError::malformed("idempotency key must be visible ASCII"))?
                    .to_string(),
            }),
            None => None,
        };
        self.engine()?.execute(command, key).await.map(Canonical)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/readyz", get(readyz))
        .route("/participants", post(register_participant))
        .route("/circles", post(create_circle))
        .route("/circles/{id}", get(get_circle))
        .route("/circles/{id}/members", post(add_member))
        .route("/notifications", post(submit_notification))
        .route("/notifications/{id}", get(get_notification))
        .route("/notifications/{id}/approvals", post(respond_approval))
        .route("/tasks", post(create_task))
        .route("/tasks/{id}", patch(change_task).get(get_task))
        .route("/tasks/{id}/reports", post(report_progress))
        .route("/tasks/{id}/goals/{label}/reached", post(goal_reached))
        .route("/types", post(register_type).get(list_types))
        .route("/mailbox", get(poll_mailbox))
        .route("/mailbox/ack", post(ack))
        .route("/stream", get(open_stream))
        .route("/state/digest", get(state_digest))
        .with_state(state)
}

/// A canonical JSON body with status 200.
pub struct Canonical(pub String);

impl IntoResponse for Canonical {
    fn into_response(self) -> Response {
        (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "application/json")],
            self.0,
        )
            .into_response()
    }
}

fn canonical_body<T: Serialize>(value: &T) -> Result<Canonical, ApiError> {
    canonical::to_string(value).map(Canonical).map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "EncodeFailure",
            e.to_string(),
        )
    })
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

/// The authenticated caller, from `Authorization: Bearer <token>`.
pub struct Caller(pub Principal);

impl Caller {
    fn admin(&self) -> Result<(), ApiError> {
        match self.0 {
            Principal::Admin => Ok(()),
            Principal::Participant(_) => Err(ApiError::admin_only()),
        }
    }

    fn participant(&self) -> Result<&ParticipantId, ApiError> {
        match &self.0 {
            Principal::Participant(p) => Ok(p),
            Principal::Admin => Err(ApiError::forbidden(
                "the admin token acts for no participant",
            )),
        }
    }

    fn scope(&self) -> String {
        match &self.0 {
            Principal::Admin => "admin".into(),
            Principal::Participant(p) => p.to_string(),
        }
    }
}

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        state
            .inner
            .tokens
            .resolve(token.trim())
            .cloned()
            .map(Caller)
            .ok_or_else(ApiError::unauthorized)
    }
}

#[derive(Serialize)]
struct Status {
    status: &'static str,
}

async fn healthz() -> Response {
    canonical_body(&Status { status: "ok" }).into_response()
}

async fn readyz(State(app): State<AppState>) -> Response {
    match app.engine() {
        Ok(_) => canonical_body(&Status { status: "ready" }).into_response(),
        Err(_) => {
            let body = canonical::to_string(&Status {
                status: "replaying",
            })
            .unwrap_or_default();
            (
                StatusCode::SERVICE_UNAVAILABLE,
                [(header::CONTENT_TYPE, "application/json")],
                body,
            )
                .into_response()
        }
    }
}

async fn register_participant(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    caller.admin()?;
    let b: ParticipantBody = parse(&body)?;
    let command = Command::RegisterParticipant {
        role: b.role,
        domain: b.domain,
        display_name: b.display_name,
    };
    app.run(command, &caller, &headers).await
}

async fn create_circle(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    caller.admin()?;
    let b: CircleBody = parse(&body)?;
    let command = Command::CreateCircle {
        experts: b.experts,
        patients: b.patients,
    };
    app.run(command, &caller, &headers).await
}

async fn add_member(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    caller.admin()?;
    let b: MemberBody = parse(&body)?;
    let command = Command::AddMember {
        circle: CircleId::new(id),
        participant: b.participant,
    };
    app.run(command, &caller, &headers).await
}

async fn submit_notification(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    let sender = caller.participant()?.clone();
    let b: NotificationBody = parse(&body)?;
    let command = Command::SubmitNotification {
        sender,
        circle: b.circle,
        type_code: b.type_code,
        payload: b.payload,
        patient: b.patient,
    };
    app.run(command, &caller, &headers).await
}

async fn respond_approval(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    let expert = caller.participant()?.clone();
    let b: ApprovalBody = parse(&body)?;
    let command = Command::RespondApproval {
        expert,
        notification: NotificationId::new(id),
        verdict: b.verdict,
    };
    app.run(command, &caller, &headers).await
}

async fn create_task(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    let creator = caller.participant()?.clone();
    let b: TaskBody = parse(&body)?;
    let command = Command::CreateTask {
        creator,
        circle: b.circle,
        patient: b.patient,
        instructions: b.instructions,
        schedule: b.schedule,
        goals: b.goals,
    };
    app.run(command, &caller, &headers).await
}

async fn change_task(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    let editor = caller.participant()?.clone();
    let b: TaskPatchBody = parse(&body)?;
    let command = Command::ChangeTask {
        editor,
        task: TaskId::new(id),
        diff: b.diff,
        notify_patient: b.notify_patient,
    };
    app.run(command, &caller, &headers).await
}

async fn report_progress(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    let patient = caller.participant()?.clone();
    let b: ReportBody = parse(&body)?;
    let command = Command::ReportProgress {
        patient,
        task: TaskId::new(id),
        metrics: b.metrics,
    };
    app.run(command, &caller, &headers).await
}

async fn goal_reached(
    State(app): State<AppState>,
    Path((id, label)): Path<(String, String)>,
    caller: Caller,
    headers: HeaderMap,
) -> Result<Canonical, ApiError> {
    let patient = caller.participant()?.clone();
    let command = Command::RecordGoalReached {
        patient,
        task: TaskId::new(id),
        label,
    };
    app.run(command, &caller, &headers).await
}

async fn register_type(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    caller.admin()?;
    let spec = parse(&body)?;
    app.run(Command::RegisterType { spec }, &caller, &headers)
        .await
}

async fn ack(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Canonical, ApiError> {
    let mailbox = caller.participant()?.clone();
    let b: AckBody = parse(&body)?;
    let command = Command::Ack {
        mailbox,
        up_to_seq: b.up_to_seq,
    };
    app.run(command, &caller, &headers).await
}

#[derive(Debug, Deserialize)]
pub struct MailboxQuery {
    #[serde(default)]
    pub after_seq: Option<u64>,
    #[serde(default)]
    pub max_batch: Option<usize>,
    /// Must name the caller's own mailbox when given.
    #[serde(default)]
    pub mailbox: Option<ParticipantId>,
}

/// Response of `GET /mailbox`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MailboxPage {
    pub deliveries: Vec<caremesh_core::Delivery>,
    pub head: u64,
    pub last_acked_seq: u64,
}

fn own_mailbox(caller: &Caller, asked: Option<&ParticipantId>) -> Result<ParticipantId, ApiError> {
    let me = caller.participant()?;
    match asked {
        Some(other) if other != me => Err(ApiError::forbidden(format!(
            "mailbox {other} belongs to another participant"
        ))),
        _ => Ok(me.clone()),
    }
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(t)| t)
        .map_err(|e| ApiError::malformed(e.body_text()))
}

async fn poll_mailbox(
    State(app): State<AppState>,
    caller: Caller,
    q: Result<Query<MailboxQuery>, QueryRejection>,
) -> Result<Canonical, ApiError> {
    let q = query(q)?;
    let me = own_mailbox(&caller, q.mailbox.as_ref())?;
    let max = q.max_batch.unwrap_or(DEFAULT_MAX_BATCH).clamp(1, MAX_BATCH_CAP);
    let page = app.read(|c| {
        let deliveries = c.poll(&me, q.after_seq.unwrap_or(0), max)?;
        let mailbox = c.state().mailbox(&me).expect("polled mailbox exists");
        Ok(MailboxPage {
            deliveries,
            head: mailbox.head(),
            last_acked_seq: mailbox.cursor().last_acked_seq,
        })
    })?;
    canonical_body(&page)
}

#[derive(Debug, Deserialize)]
pub struct StreamQuery {
    #[serde(default)]
    pub after_seq: Option<u64>,
    #[serde(default)]
    pub mailbox: Option<ParticipantId>,
}

async fn open_stream(
    State(app): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    q: Result<Query<StreamQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let q = query(q)?;
    let me = own_mailbox(&caller, q.mailbox.as_ref())?;
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok());
    let after = q.after_seq.or(last_event_id).unwrap_or(0);
    let (backlog, live) = app.read(|c| Ok(c.resume(&me, after)?))?;
    tracing::debug!(mailbox = %me, after, backlog = backlog.len(), "stream opened");
    Ok(stream::response(
        backlog,
        live,
        app.inner.heartbeat,
        app.inner.shutdown.clone(),
    ))
}

/// Experts of the circle (or the admin) may read circle-level records.
fn may_read_circle(c: &Coordinator, caller: &Caller, circle: &CircleId) -> bool {
    match &caller.0 {
        Principal::Admin => true,
        Principal::Participant(p) => c.state().circle(circle).is_some_and(|cc| {
            cc.experts.contains(p)
                && c.state()
                    .participant(p)
                    .is_some_and(|pp| pp.role == Role::Expert)
        }),
    }
}

async fn get_circle(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
) -> Result<Canonical, ApiError> {
    let id = CircleId::new(id);
    let circle = app.read(|c| {
        let circle = c
            .state()
            .circle(&id)
            .ok_or_else(|| caremesh_core::CoordError::UnknownCircle(id.to_string()))?;
        let member = match &caller.0 {
            Principal::Admin => true,
            Principal::Participant(p) => circle.contains(p),
        };
        if !member {
            return Err(ApiError::forbidden("not a member of this circle"));
        }
        Ok(circle.clone())
    })?;
    canonical_body(&circle)
}

async fn get_notification(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
) -> Result<Canonical, ApiError> {
    let id = NotificationId::new(id);
    let n = app.read(|c| {
        let n = c
            .state()
            .notification(&id)
            .ok_or_else(|| caremesh_core::CoordError::UnknownNotification(id.to_string()))?;
        let own = matches!(&caller.0, Principal::Participant(p) if *p == n.sender);
        if !own && !may_read_circle(c, &caller, &n.circle) {
            return Err(ApiError::forbidden("not visible to this participant"));
        }
        Ok(n.clone())
    })?;
    canonical_body(&n)
}

async fn get_task(
    State(app): State<AppState>,
    Path(id): Path<String>,
    caller: Caller,
) -> Result<Canonical, ApiError> {
    let id = TaskId::new(id);
    let task = app.read(|c| {
        let t = c
            .state()
            .task(&id)
            .ok_or_else(|| caremesh_core::CoordError::UnknownTask(id.to_string()))?;
        let own = matches!(&caller.0, Principal::Participant(p) if *p == t.patient);
        if !own && !may_read_circle(c, &caller, &t.circle) {
            return Err(ApiError::forbidden("not visible to this participant"));
        }
        Ok(t.clone())
    })?;
    canonical_body(&task)
}

async fn list_types(
    State(app): State<AppState>,
    _caller: Caller,
) -> Result<Canonical, ApiError> {
    let types = app.read(|c| Ok(c.state().types().all()))?;
    canonical_body(&types)
}

/// Response of `GET /state/digest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digests {
    pub head: u64,
    pub log_digest: String,
    pub state_digest: String,
}

async fn state_digest(
    State(app): State<AppState>,
    caller: Caller,
) -> Result<Canonical, ApiError> {
    caller.admin()?;
    let d = app.read(|c| {
        Ok(Digests {
            head: c.log().head(),
            log_digest: c.log().digest(),
            state_digest: c.state().digest(),
        })
    })?;
    canonical_body(&d)
}
