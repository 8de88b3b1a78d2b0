//! HTTP service for live data collection.
//!
//! ```text
//! POST /sessions                {task, participant_id[, seed, n_trials]} -> {session_id, n_trials}
//! GET  /sessions/{id}/next      -> {trial_index, payload} | {done: true}
//! POST /sessions/{id}/responses {trial_index, choice | rating} -> {ok: true}
//! GET  /export?task=&participant= -> JSONL
//! ```

pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::ConceptSet;
use crate::error::{Error, Result};
use crate::io;

pub use store::{
    plan_trials, ExportFilter, Record, Session, SessionStore, SessionTask, StoredRecord, Submission, Trial,
    DEFAULT_TRIPLET_TRIALS,
};

/// Service settings, read from TOML. `PORT` and `STORE_DIR` override the
/// corresponding fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// CSV with `label,category`; the built-in 30-concept set when absent.
    pub concepts: Option<PathBuf>,
    pub triplet_trials: usize,
    /// Session seeds derive from this when a request gives none.
    pub seed: Option<u64>,
    pub port: u16,
    pub store_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            concepts: None,
            triplet_trials: DEFAULT_TRIPLET_TRIALS,
            seed: None,
            port: 8080,
            store_dir: PathBuf::from("store"),
        }
    }
}

impl ServiceConfig {
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(p) = std::env::var("PORT") {
            self.port = p
                .parse()
                .map_err(|_| Error::Parse(format!("PORT `{p}` is not a port number")))?;
        }
        if let Ok(d) = std::env::var("STORE_DIR") {
            self.store_dir = d.into();
        }
        Ok(self)
    }

    pub fn load_concepts(&self) -> Result<ConceptSet> {
        match &self.concepts {
            Some(p) => io::read_concept_set(io::open(p)?),
            None => Ok(ConceptSet::tools_and_reptiles()),
        }
    }
}

struct AppState {
    store: SessionStore,
    triplet_trials: usize,
    seed_base: Option<u64>,
    counter: std::sync::atomic::AtomicU64,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownSession(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) | Error::OutOfOrder { .. } => StatusCode::CONFLICT,
            Error::InvalidPayload(_) | Error::OutOfRange(_) | Error::InvalidConceptSet(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({"error": self.0.kind(), "message": self.0.to_string()}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::Invariant(format!("worker panicked: {e}"))))?
        .map_err(ApiError)
}

#[derive(Deserialize)]
struct CreateSession {
    task: String,
    participant_id: String,
    seed: Option<u64>,
    n_trials: Option<usize>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: std::result::Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body.map_err(|e| Error::InvalidPayload(e.body_text()))?;
    let task: SessionTask = req.task.parse()?;
    let n_trials = req.n_trials.unwrap_or(app.triplet_trials);
    let seed = req.seed.unwrap_or_else(|| match app.seed_base {
        Some(base) => base.wrapping_add(app.counter.fetch_add(1, std::sync::atomic::Ordering::Relaxed)),
        None => rand::random(),
    });
    let s = blocking({
        let app = Arc::clone(&app);
        move || app.store.create_session(task, &req.participant_id, n_trials, seed)
    })
    .await?;
    Ok(Json(json!({
        "session_id": s.session_id,
        "n_trials": s.trial_plan.len(),
        "seed": s.seed,
    })))
}

fn concept_view(cs: &ConceptSet, i: usize) -> serde_json::Value {
    json!({"index": i, "label": cs.label(i)})
}

async fn next_trial(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let (session, _) = app.store.session(&id)?;
    let n = session.trial_plan.len();
    let cs = app.store.concepts();
    Ok(Json(match app.store.next_trial(&id)? {
        None => json!({"done": true, "n_trials": n}),
        Some((i, Trial::Triplet { anchor, option_a, option_b })) => json!({
            "trial_index": i,
            "n_trials": n,
            "payload": {
                "task": "triplet",
                "anchor": concept_view(cs, anchor),
                "options": {"a": concept_view(cs, option_a), "b": concept_view(cs, option_b)},
            }
        }),
        Some((i, Trial::Pairwise { concept_i, concept_j })) => json!({
            "trial_index": i,
            "n_trials": n,
            "payload": {
                "task": "pairwise",
                "concept_i": concept_view(cs, concept_i),
                "concept_j": concept_view(cs, concept_j),
            }
        }),
    }))
}

async fn submit(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: std::result::Result<Json<Submission>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(sub) = body.map_err(|e| Error::InvalidPayload(e.body_text()))?;
    blocking(move || app.store.submit(&id, &sub)).await?;
    Ok(Json(json!({"ok": true})))
}

async fn export(
    State(app): State<Arc<AppState>>,
    Query(filter): Query<ExportFilter>,
) -> ApiResult<impl IntoResponse> {
    let records = blocking(move || app.store.export(&filter)).await?;
    let mut body = Vec::new();
    io::write_jsonl(&records, &mut body)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

/// Builds the router over an opened store.
pub fn router(store: SessionStore, triplet_trials: usize, seed_base: Option<u64>) -> Router {
    let state = Arc::new(AppState {
        store,
        triplet_trials,
        seed_base,
        counter: Default::default(),
    });
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit))
        .route("/export", get(export))
        .with_state(state)
}

/// Serves until interrupted. A bound port of 0 picks a free one; `on_bind`
/// receives the actual address.
pub async fn serve(cfg: ServiceConfig, on_bind: impl FnOnce(SocketAddr)) -> Result<()> {
    let concepts = Arc::new(cfg.load_concepts()?);
    let store = SessionStore::open(&cfg.store_dir, concepts)?;
    let app = router(store, cfg.triplet_trials, cfg.seed);
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port)).await?;
    let addr = listener.local_addr()?;
    log::info!("listening on {addr}, store {}", cfg.store_dir.display());
    on_bind(addr);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
