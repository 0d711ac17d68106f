//! HTTP and websocket front end for sessions.
//!
//! | route                                | |
//! |--------------------------------------|-------------------------------------------|
//! | `POST /sessions`                     | create; body `{"corpus"?, "config"?}`       |
//! | `GET /sessions/{id}/snapshot`        | current [`Snapshot`] as JSON                 |
//! | `GET /sessions/{id}/provenance`      | the provenance log as JSONL                  |
//! | `POST /sessions/{id}/messages`       | one protocol message; replies as a JSON array |
//! | `GET /sessions/{id}/stream`          | websocket: protocol messages in, replies and pushes out |
//!
//! Every session runs on its own loop thread; handlers talk to it through a
//! [`SessionHandle`], off the async runtime.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use specex_core::service::{Session, SessionConfig, SessionHandle, SessionLoop, Snapshot};
use tokio::sync::Notify;

/// Queue length for each websocket subscriber.
const STREAM_QUEUE: usize = 256;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    default_corpus: Option<PathBuf>,
    default_config: SessionConfig,
    sessions: Mutex<HashMap<String, Arc<SessionLoop>>>,
}

impl AppState {
    pub fn new(default_corpus: Option<PathBuf>, default_config: SessionConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                default_corpus,
                default_config,
                sessions: Mutex::new(HashMap::new()),
            }),
        }
    }

    fn handle(&self, id: &str) -> Option<SessionHandle> {
        self.inner.sessions.lock().expect("sessions lock").get(id).map(|l| l.handle())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub corpus: Option<PathBuf>,
    /// Session config in its JSON form; defaults to the server's.
    pub config: Option<SessionConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub snapshot: Snapshot,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session {id}"))
}

fn gone() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "session loop stopped".into())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/sessions/{id}/provenance", get(provenance))
        .route("/sessions/{id}/messages", post(message))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Run a blocking call to a session loop off the async runtime.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Option<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .ok_or_else(gone)
}

async fn create(State(state): State<AppState>, body: Option<Json<CreateSession>>) -> Result<impl IntoResponse, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let corpus = req
        .corpus
        .or_else(|| state.inner.default_corpus.clone())
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "no corpus given and no default configured".into()))?;
    let config = req.config.unwrap_or_else(|| state.inner.default_config.clone());
    let mut session = tokio::task::spawn_blocking(move || Session::create(&corpus, config))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let lp = {
        let mut sessions = state.inner.sessions.lock().expect("sessions lock");
        // Equal corpus and seed give equal ids; keep them apart.
        let base = session.session_id().to_string();
        let mut id = base.clone();
        let mut n = 1;
        while sessions.contains_key(&id) {
            n += 1;
            id = format!("{base}-{n}");
        }
        session.set_session_id(id.clone());
        let lp = Arc::new(SessionLoop::spawn(session));
        sessions.insert(id, Arc::clone(&lp));
        lp
    };
    let handle = lp.handle();
    let session_id = handle.id().to_string();
    let snapshot = blocking(move || handle.snapshot()).await?;
    Ok((StatusCode::CREATED, Json(Created { session_id, snapshot })))
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    let h = state.handle(&id).ok_or_else(|| not_found(&id))?;
    Ok(Json(blocking(move || h.snapshot()).await?))
}

async fn provenance(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let h = state.handle(&id).ok_or_else(|| not_found(&id))?;
    let body = blocking(move || h.provenance()).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn message(State(state): State<AppState>, Path(id): Path<String>, body: String) -> Result<Response, ApiError> {
    let h = state.handle(&id).ok_or_else(|| not_found(&id))?;
    let replies = blocking(move || h.request(&body)).await?;
    let values: Vec<Value> = replies
        .iter()
        .map(|r| serde_json::from_str(r).expect("replies are JSON"))
        .collect();
    Ok(Json(values).into_response())
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let h = state.handle(&id).ok_or_else(|| not_found(&id))?;
    Ok(ws.on_upgrade(move |socket| pump(socket, h)))
}

/// Forward client messages to the session and everything the session
/// produces back to the client, until either side goes away.
async fn pump(mut socket: WebSocket, h: SessionHandle) {
    let sub = {
        let h = h.clone();
        match tokio::task::spawn_blocking(move || h.subscribe(STREAM_QUEUE)).await {
            Ok(Some(s)) => s,
            _ => return,
        }
    };
    let wake = Arc::new(Notify::new());
    {
        let wake = Arc::clone(&wake);
        sub.set_waker(move || wake.notify_one());
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                };
                let h = h.clone();
                let Ok(Some(replies)) = tokio::task::spawn_blocking(move || h.request(&text)).await else {
                    break;
                };
                // Pushes raised by this request go out after its replies.
                for r in replies.into_iter().chain(sub.drain()) {
                    if socket.send(Message::Text(r.into())).await.is_err() {
                        sub.close();
                        return;
                    }
                }
            }
            _ = wake.notified() => {
                for r in sub.drain() {
                    if socket.send(Message::Text(r.into())).await.is_err() {
                        sub.close();
                        return;
                    }
                }
            }
        }
    }
    sub.close();
}
