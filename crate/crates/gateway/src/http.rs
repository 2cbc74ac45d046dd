//! HTTP + server-sent-events front end for the [`Gateway`].

use std::convert::Infallible;
use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cis_core::model::encode_message_string;
use cis_core::ConversationMode;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::attachments::AttachmentError;
use crate::service::{ChannelRole, Delivery, Gateway, GatewayError, IncomingMessage, WizardTarget};

pub const TOKEN_HEADER: &str = "x-session-token";

pub struct ApiError(GatewayError);

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            GatewayError::UnknownConversation(_) => StatusCode::NOT_FOUND,
            GatewayError::Unauthorized => StatusCode::UNAUTHORIZED,
            GatewayError::Invalid(_) | GatewayError::Rejected(_) | GatewayError::UnknownTarget(_) => {
                StatusCode::BAD_REQUEST
            }
            GatewayError::NotWoz(_) | GatewayError::WizardAlreadyAttached => StatusCode::CONFLICT,
            GatewayError::Busy => StatusCode::SERVICE_UNAVAILABLE,
            GatewayError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.0.to_string() });
        if let GatewayError::Rejected(verdict) = &self.0 {
            body["violations"] = verdict.violations.iter().map(|v| Value::String(v.to_string())).collect();
        }
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize, Default)]
struct TokenQuery {
    token: Option<String>,
}

fn token<'a>(headers: &'a HeaderMap, query: &'a TokenQuery) -> Option<&'a str> {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or(query.token.as_deref())
}

/// Conversation-scoped endpoints require the session token.
fn authorize(gw: &Gateway, id: &str, headers: &HeaderMap, query: &TokenQuery) -> Result<(), ApiError> {
    match token(headers, query) {
        Some(t) => gw.authorize(id, Some(t)).map(|_| ()).map_err(ApiError),
        None => {
            gw.mode(id)?;
            Err(ApiError(GatewayError::Unauthorized))
        }
    }
}

fn delivery_json(d: &Delivery) -> Value {
    let message: Value = serde_json::from_str(&encode_message_string(d.message())).expect("canonical encoding is JSON");
    match d {
        Delivery::Delivered { seq, leg, .. } => json!({ "status": "delivered", "seq": seq, "leg": leg, "message": message }),
        Delivery::Queued { position, .. } => json!({ "status": "queued", "position": position, "message": message }),
    }
}

fn delivery_status(d: &Delivery) -> StatusCode {
    match d {
        Delivery::Delivered { .. } => StatusCode::CREATED,
        Delivery::Queued { .. } => StatusCode::ACCEPTED,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateConversation {
    #[serde(default)]
    mode: Option<ConversationMode>,
}

async fn health() -> &'static str {
    "ok"
}

async fn create_conversation(State(gw): State<Gateway>, body: Bytes) -> Response {
    let req: CreateConversation = if body.is_empty() {
        CreateConversation { mode: None }
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return ApiError(GatewayError::Invalid(format!("malformed: {e}"))).into_response(),
        }
    };
    let info = gw.create_conversation(req.mode.unwrap_or_default());
    (StatusCode::CREATED, Json(info)).into_response()
}

async fn post_message(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    authorize(&gw, &id, &headers, &q)?;
    let (incoming, _) = IncomingMessage::parse(&body, false)?;
    let delivery = gw.post_seeker_message(&id, &incoming)?;
    Ok((delivery_status(&delivery), Json(delivery_json(&delivery))).into_response())
}

async fn post_wizard_message(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    authorize(&gw, &id, &headers, &q)?;
    let (incoming, target) = IncomingMessage::parse(&body, true)?;
    let raw = target.ok_or_else(|| GatewayError::UnknownTarget("missing".into()))?;
    let target = WizardTarget::parse(&raw).ok_or(GatewayError::UnknownTarget(raw))?;
    let delivery = gw.post_wizard_message(&id, target, &incoming)?;
    Ok((delivery_status(&delivery), Json(delivery_json(&delivery))).into_response())
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    from_seq: Option<u64>,
    role: Option<ChannelRole>,
    token: Option<String>,
}

async fn stream(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let tq = TokenQuery { token: q.token.clone() };
    authorize(&gw, &id, &headers, &tq)?;
    let sub = gw.subscribe(&id, q.role.unwrap_or(ChannelRole::Seeker), q.from_seq.unwrap_or(1))?;
    let events = futures::stream::unfold(sub, |mut sub| async move {
        let record = sub.next().await?;
        let event = Event::default()
            .id(record.seq.to_string())
            .event(record.leg.as_str())
            .data(encode_message_string(&record.message));
        Some((Ok::<_, Infallible>(event), sub))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

async fn diagnostics(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    authorize(&gw, &id, &headers, &q)?;
    Ok(Json(gw.diagnostics(&id)).into_response())
}

async fn put_attachment(State(gw): State<Gateway>, body: Bytes) -> Response {
    match gw.attachments().put(body.to_vec()) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "attachment_id": id }))).into_response(),
        Err(e @ AttachmentError::TooLarge { .. }) => {
            (StatusCode::PAYLOAD_TOO_LARGE, Json(json!({ "error": e.to_string() }))).into_response()
        }
        Err(e @ AttachmentError::Empty) => {
            (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn get_attachment(State(gw): State<Gateway>, Path(id): Path<String>) -> Response {
    match gw.attachments().get(&id) {
        Some(bytes) => ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown attachment" }))).into_response(),
    }
}

pub fn router(gateway: Gateway) -> Router {
    let cap = gateway.attachments().cap();
    Router::new()
        .route("/health", get(health))
        .route("/conversations", post(create_conversation))
        .route("/conversations/{id}/messages", post(post_message))
        .route("/conversations/{id}/wizard/messages", post(post_wizard_message))
        .route("/conversations/{id}/stream", get(stream))
        .route("/conversations/{id}/diagnostics", get(diagnostics))
        // one extra byte so oversized uploads reach the handler's cap check
        .route("/attachments", post(put_attachment).layer(DefaultBodyLimit::max(cap + 1)))
        .route("/attachments/{id}", get(get_attachment))
        .with_state(gateway)
}

/// Binds and serves until the future is dropped or the process exits.
pub async fn serve(gateway: Gateway, listen: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, router(gateway)).await?;
    Ok(())
}

/// Binds to `listen` (port 0 allowed) and serves in the background; returns
/// the bound address.
pub async fn spawn(gateway: Gateway, listen: SocketAddr) -> anyhow::Result<SocketAddr> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(gateway)).await {
            tracing::error!(error = %e, "gateway stopped");
        }
    });
    Ok(addr)
}
