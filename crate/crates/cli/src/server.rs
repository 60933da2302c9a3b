//! HTTP/JSON API over one [`Session`].
//!
//! Mutations take a single busy flag for their whole duration, so a second
//! mutation arriving mid-computation is rejected with 409 rather than queued.
//! The pipeline itself runs on the blocking pool.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::outline::{bbox, outline, OUTLINE_TOLERANCE};
use crate::session::{Mutation, Session};
use eraser_core::Error;

struct Shared {
    session: Mutex<Session>,
    busy: AtomicBool,
    /// Instance outlines and plane list; fixed for the session.
    layout: Value,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(session: Session) -> Self {
        let bundle = session.bundle();
        let instances: Vec<Value> = bundle
            .instances
            .iter()
            .map(|inst| {
                json!({
                    "id": inst.id,
                    "label": inst.label,
                    "bbox": bbox(&inst.mask),
                    "outline": outline(&inst.mask, OUTLINE_TOLERANCE),
                })
            })
            .collect();
        let planes: Vec<Value> = bundle.planes.iter().map(|p| json!({"id": p.id, "kind": p.kind})).collect();
        let (w, h) = bundle.dims();
        let layout = json!({"width": w, "height": h, "instances": instances, "planes": planes});
        Self(Arc::new(Shared {
            session: Mutex::new(session),
            busy: AtomicBool::new(false),
            layout,
        }))
    }

    fn session(&self) -> MutexGuard<'_, Session> {
        // a panic inside a handler leaves the session consistent: commits are
        // the only writes and they cannot panic halfway
        self.0.session.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/scene", get(scene))
        .route("/api/image/original", get(original))
        .route("/api/image/current", get(current))
        .route("/api/erase", post(erase))
        .route("/api/restore", post(restore))
        .route("/api/undo", post(undo))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>, extra: Value) -> Response {
    let mut body = json!({"error": message.into()});
    if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
        b.extend(e);
    }
    (status, Json(body)).into_response()
}

fn core_error(e: Error) -> Response {
    match e {
        Error::UnknownInstance { ref valid, .. } => {
            let valid = valid.clone();
            error(StatusCode::NOT_FOUND, e.to_string(), json!({"valid_ids": valid}))
        }
        e if e.is_validation() => error(StatusCode::BAD_REQUEST, e.to_string(), Value::Null),
        e => {
            log::error!("erase failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), Value::Null)
        }
    }
}

fn png(bytes: &[u8]) -> Response {
    (
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")],
        bytes.to_vec(),
    )
        .into_response()
}

fn current_url(revision: u64) -> String {
    format!("/api/image/current?rev={revision}")
}

async fn scene(State(state): State<AppState>) -> Json<Value> {
    let mut body = state.0.layout.clone();
    let s = state.session();
    body["session_id"] = json!(s.session_id);
    body["image_url"] = json!("/api/image/original");
    body["current_image_url"] = json!(current_url(s.revision()));
    body["erased"] = json!(s.erased());
    Json(body)
}

async fn original(State(state): State<AppState>) -> Response {
    png(&state.session().original().png)
}

async fn current(State(state): State<AppState>) -> Response {
    png(&state.session().current().png)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdsBody {
    ids: Vec<String>,
}

fn parse_ids(body: &Bytes) -> Result<Vec<String>, Response> {
    serde_json::from_slice::<IdsBody>(body)
        .map(|b| b.ids)
        .map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed body: {e}"), json!({"expected": {"ids": ["<instance id>"]}})))
}

async fn erase(State(state): State<AppState>, body: Bytes) -> Response {
    match parse_ids(&body) {
        Ok(ids) => mutate(state, Mutation::Erase(ids)).await,
        Err(r) => r,
    }
}

async fn restore(State(state): State<AppState>, body: Bytes) -> Response {
    match parse_ids(&body) {
        Ok(ids) => mutate(state, Mutation::Restore(ids)).await,
        Err(r) => r,
    }
}

async fn undo(State(state): State<AppState>) -> Response {
    mutate(state, Mutation::Undo).await
}

/// Clears the busy flag however the handler exits.
struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

async fn mutate(state: AppState, mutation: Mutation) -> Response {
    if state.0.busy.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
        return error(StatusCode::CONFLICT, "a computation is already in flight for this session", Value::Null);
    }
    let _guard = BusyGuard(&state.0.busy);

    let (plan, hit, bundle, config) = {
        let s = state.session();
        let plan = match s.plan(&mutation) {
            Ok(p) => p,
            Err(e) => return core_error(e),
        };
        let hit = s.cached(&plan.target);
        (plan, hit, s.bundle().clone(), s.config().clone())
    };
    let (rendered, cached) = match hit {
        Some(r) => (r, true),
        None => {
            let target = plan.target.clone();
            let job = tokio::task::spawn_blocking(move || Session::compute(&bundle, &config, &target));
            match job.await {
                Ok(Ok(r)) => (Arc::new(r), false),
                Ok(Err(e)) => return core_error(e),
                Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("pipeline task failed: {e}"), Value::Null),
            }
        }
    };
    let mut s = state.session();
    s.commit(plan, Some(rendered.clone()));
    let mut timings = serde_json::to_value(rendered.timings).unwrap_or(Value::Null);
    if !timings.is_object() {
        timings = json!({});
    }
    timings["cached"] = json!(cached);
    Json(json!({
        "image_url": current_url(s.revision()),
        "erased": s.erased(),
        "cached": cached,
        "timings": timings,
    }))
    .into_response()
}

/// Serve until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
