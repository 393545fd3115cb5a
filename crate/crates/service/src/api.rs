//! HTTP API for the labeling loop and the planner.
//!
//! Every mutation runs on a clone of the session inside `spawn_blocking`,
//! is written to disk, and only then replaces the cached copy and answers.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use style_opt::costs::{ObjectiveConfig, StyleCost};
use style_opt::kinematics::{ee_path, EePose, JointConfig};
use style_opt::learning::Label;
use style_opt::optimizer::{plan, Plan};
use style_opt::query::{next_batch, record_label, QueryBatch};
use style_opt::store::{Session, SessionConfig, SessionStore};
use style_opt::trajectory::{time_trajectory, Task, TimedTrajectory, Trajectory};
use style_opt::Error;
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::CorsLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session {id:?}"),
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    /// Maps a library error; argument problems get `invalid_code`.
    fn from_core(e: Error, invalid_code: &'static str) -> Self {
        let msg = e.to_string();
        match e {
            Error::BatchPending(_) => Self::new(StatusCode::CONFLICT, "batch_pending", msg),
            Error::UnknownPair(_) => Self::new(StatusCode::NOT_FOUND, "pair_not_found", msg),
            Error::AlreadyLabeled(_) => Self::new(StatusCode::CONFLICT, "already_labeled", msg),
            Error::Dimension { .. }
            | Error::NonFinite(_)
            | Error::InvalidArgument(_)
            | Error::NoTasks => Self::new(StatusCode::UNPROCESSABLE_ENTITY, invalid_code, msg),
            Error::Training(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "training_failed", msg)
            }
            Error::Replay(_) | Error::Io { .. } | Error::Json { .. } | Error::Serde(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", msg)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"code": self.code, "message": self.message})),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Default)]
struct Sessions {
    map: HashMap<String, Arc<RwLock<Session>>>,
}

/// Shared server state: the on-disk store plus a cache of loaded sessions,
/// each behind its own lock.
#[derive(Clone)]
pub struct AppState {
    store: SessionStore,
    sessions: Arc<Mutex<Sessions>>,
}

impl AppState {
    pub fn new(store: SessionStore) -> Self {
        AppState {
            store,
            sessions: Arc::new(Mutex::new(Sessions::default())),
        }
    }

    async fn session(&self, id: &str) -> ApiResult<Arc<RwLock<Session>>> {
        let mut cache = self.sessions.lock().await;
        if let Some(s) = cache.map.get(id) {
            return Ok(s.clone());
        }
        if !self.store.exists(id) {
            return Err(ApiError::not_found(id));
        }
        let store = self.store.clone();
        let owned = id.to_string();
        let loaded = tokio::task::spawn_blocking(move || store.load(&owned))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(|e| ApiError::from_core(e, "invalid_session"))?;
        let entry = Arc::new(RwLock::new(loaded));
        cache.map.insert(id.to_string(), entry.clone());
        Ok(entry)
    }

    /// Runs `f` on a copy of the session, persists it, then commits.
    async fn mutate<T, F>(&self, id: &str, invalid_code: &'static str, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> style_opt::Result<T> + Send + 'static,
    {
        let entry = self.session(id).await?;
        let mut guard = entry.write().await;
        let mut work = guard.clone();
        let store = self.store.clone();
        let (work, out) = tokio::task::spawn_blocking(move || {
            let out = f(&mut work).and_then(|v| store.save(&work).map(|_| v));
            (work, out)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
        let value = out.map_err(|e| ApiError::from_core(e, invalid_code))?;
        *guard = work;
        Ok(value)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/queries/next", get(next_queries))
        .route("/sessions/{id}/queries/pending", get(pending_queries))
        .route("/sessions/{id}/labels", post(post_label))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/plan", post(post_plan))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes, code: &'static str) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let config: SessionConfig = parse_body(&body, "invalid_config")?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session =
        Session::new(id.clone(), config).map_err(|e| ApiError::from_core(e, "invalid_config"))?;
    let store = state.store.clone();
    let saved = session.clone();
    tokio::task::spawn_blocking(move || store.save(&saved))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::from_core(e, "invalid_config"))?;
    state
        .sessions
        .lock()
        .await
        .map
        .insert(id.clone(), Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(Created { session_id: id })))
}

/// A trajectory with everything a client needs to render it.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryView {
    #[serde(flatten)]
    pub timed: TimedTrajectory,
    pub ee_path: Vec<EePose>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub label: Option<Label>,
    pub x_a: TrajectoryView,
    pub x_b: TrajectoryView,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchView {
    pub batch_id: String,
    pub round_index: usize,
    pub task_index: usize,
    pub pairs: Vec<PairView>,
}

fn batch_view(session: &Session, batch: &QueryBatch) -> style_opt::Result<BatchView> {
    let arm = &session.config.arm;
    let duration = session.config.tasks[batch.task_index].duration;
    let view = |x: &Trajectory| -> style_opt::Result<TrajectoryView> {
        Ok(TrajectoryView {
            timed: time_trajectory(x, duration)?,
            ee_path: ee_path(arm, x)?,
        })
    };
    let pairs = batch
        .pairs
        .iter()
        .map(|p| {
            Ok(PairView {
                pair_id: p.pair_id.clone(),
                label: p.label,
                x_a: view(&p.x_a)?,
                x_b: view(&p.x_b)?,
            })
        })
        .collect::<style_opt::Result<_>>()?;
    Ok(BatchView {
        batch_id: batch.batch_id.clone(),
        round_index: batch.round_index,
        task_index: batch.task_index,
        pairs,
    })
}

async fn next_queries(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<BatchView>> {
    let view = state
        .mutate(&id, "invalid_session", |s| {
            let per_batch = s.config.settings.pairs_per_batch;
            let batch = next_batch(s, per_batch)?;
            batch_view(s, &batch)
        })
        .await?;
    Ok(Json(view))
}

/// The outstanding batch, so a client can resume after a reload.
async fn pending_queries(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<BatchView>> {
    let entry = state.session(&id).await?;
    let s = entry.read().await;
    let batch = s.pending.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "no_pending_batch",
            "no batch is outstanding",
        )
    })?;
    Ok(Json(
        batch_view(&s, batch).map_err(|e| ApiError::from_core(e, "invalid_session"))?,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub pair_id: String,
    pub choice: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub remaining_in_batch: usize,
    pub trained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

async fn post_label(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<LabelResponse>> {
    let req: LabelRequest = parse_body(&body, "invalid_label")?;
    let label: Label = req.choice.parse().map_err(|e: Error| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_label",
            e.to_string(),
        )
    })?;
    // unknown session must win over a bad pair id
    state.session(&id).await?;
    let out = state
        .mutate(&id, "invalid_label", move |s| {
            record_label(s, &req.pair_id, label)
        })
        .await?;
    Ok(Json(LabelResponse {
        remaining_in_batch: out.remaining_in_batch,
        trained: out.trained,
        final_loss: out.report.map(|r| r.final_loss),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CostSummary {
    #[serde(rename = "type")]
    pub kind: String,
    pub style: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uses_velocity: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_count: Option<usize>,
}

impl From<&StyleCost> for CostSummary {
    fn from(c: &StyleCost) -> Self {
        match c {
            StyleCost::Featurized(f) => CostSummary {
                kind: "featurized".into(),
                style: f.style.clone(),
                w: Some(f.w.clone()),
                uses_velocity: Some(f.uses_velocity),
                param_count: None,
            },
            StyleCost::Mlp(m) => CostSummary {
                kind: "mlp".into(),
                style: m.style.clone(),
                w: None,
                uses_velocity: None,
                param_count: Some(m.param_count()),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusView {
    pub session_id: String,
    pub round_index: usize,
    pub labels_total: usize,
    pub pending_pairs: usize,
    pub last_loss: Option<f64>,
    /// Reserved for asynchronous training; always false today.
    pub training: bool,
    pub cost_snapshot_summary: CostSummary,
}

async fn status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<StatusView>> {
    let entry = state.session(&id).await?;
    let s = entry.read().await;
    Ok(Json(StatusView {
        session_id: s.session_id.clone(),
        round_index: s.round_index,
        labels_total: s.labels_total(),
        pending_pairs: s.pending.as_ref().map_or(0, QueryBatch::unlabeled),
        last_loss: s.last_report.as_ref().map(|r| r.final_loss),
        training: false,
        cost_snapshot_summary: (&s.cost).into(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: JointConfig,
    pub goal: JointConfig,
    pub lambda: Option<f64>,
    #[serde(rename = "T")]
    pub len: Option<usize>,
    pub duration: Option<f64>,
}

async fn post_plan(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Plan>> {
    let req: PlanRequest = parse_body(&body, "invalid_task")?;
    let entry = state.session(&id).await?;
    let s = entry.read().await.clone();
    let out = tokio::task::spawn_blocking(move || {
        let settings = &s.config.settings;
        let mut task = Task::new(req.start, req.goal);
        if let Some(d) = req.duration {
            task.duration = d;
        }
        let len = req.len.unwrap_or(settings.trajectory_len);
        let cfg =
            ObjectiveConfig::new(Some(s.cost.clone()), req.lambda.unwrap_or(settings.lambda))?;
        s.cost.check_compatible(&s.config.arm, len)?;
        plan(&cfg, &s.config.arm, &task, len, &settings.optimizer)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::from_core(e, "invalid_task"))?;
    Ok(Json(out))
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
