//! HTTP API over composition sessions, reuse checks, loads, runs and
//! store metrics.

pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use flowcache_core::engine::{Engine, EngineConfig, PlanError};
use flowcache_core::miner::{rules_report, RuleSet};
use flowcache_core::model::{
    Catalog, Edge, InputBinding, PortRef, Violation, WorkflowFile, WorkflowGraph, WorkflowNodeFile,
};
use flowcache_core::recommend::{CheckResult, TimingIndex};
use flowcache_core::store::{ExecutionRecord, RecordFilter, Store, StoreStats};

pub use session::{RunHandle, RunView, Session, SessionError, SessionView};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    /// Worker limit for runs that do not name one.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            engine: EngineConfig::default(),
            workers: 4,
        }
    }
}

/// Shared server state: one store and rule set, many sessions.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    catalog: Arc<Catalog>,
    store: Arc<Store>,
    rules: Arc<RwLock<RuleSet>>,
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    runs: RwLock<HashMap<String, Arc<RunHandle>>>,
}

impl AppState {
    /// State whose rule set is mined from the store's history.
    pub fn new(catalog: Catalog, store: Arc<Store>, config: ServiceConfig) -> Self {
        let rules = store.with_records(RuleSet::mine);
        AppState {
            inner: Arc::new(Inner {
                catalog: Arc::new(catalog),
                store,
                rules: Arc::new(RwLock::new(rules)),
                config,
                sessions: RwLock::new(HashMap::new()),
                runs: RwLock::new(HashMap::new()),
            }),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.inner.store
    }

    pub fn rules(&self) -> &Arc<RwLock<RuleSet>> {
        &self.inner.rules
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    fn create_session(&self, graph: WorkflowGraph) -> SessionView {
        let engine = Arc::new(Engine::new(
            self.inner.catalog.clone(),
            self.inner.store.clone(),
            self.inner.rules.clone(),
            self.inner.config.engine.clone(),
        ));
        let id = format!("s-{}", uuid::Uuid::new_v4().simple());
        let session = Session::new(id.clone(), graph, engine);
        let view = session.view();
        self.inner
            .sessions
            .write()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(session)));
        view
    }

    /// Runs `f` under the session's lock.
    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
    ) -> Result<T, ApiError> {
        let session = self.session(id)?;
        let mut s = session.lock().unwrap();
        Ok(f(&mut s)?)
    }

    /// Applies a mutation and returns the updated view.
    fn mutate(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<(), SessionError>,
    ) -> Result<Json<SessionView>, ApiError> {
        self.with_session(id, |s| {
            f(s)?;
            Ok(Json(s.view()))
        })
    }

    fn timing(&self) -> TimingIndex {
        self.inner.store.with_records(TimingIndex::from_history)
    }
}

/// Error response: a status code and a JSON body with a message and, for
/// graph problems, the violations.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                violations: Vec::new(),
            },
        }
    }

    fn not_found(error: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, error)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownNode(_) | SessionError::UnknownEdge(_) => StatusCode::NOT_FOUND,
            SessionError::UnknownModule(_)
            | SessionError::Model(_)
            | SessionError::InvalidDraft(_)
            | SessionError::Recommend(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Plan(PlanError::Model(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::DuplicateNode(_)
            | SessionError::Rejected(_)
            | SessionError::StaleSuggestion { .. }
            | SessionError::PartialMatch { .. }
            | SessionError::Busy(_)
            | SessionError::Plan(_) => StatusCode::CONFLICT,
        };
        let violations = match &e {
            SessionError::Rejected(v) | SessionError::InvalidDraft(v) => v.clone(),
            _ => Vec::new(),
        };
        ApiError {
            status,
            body: ErrorBody {
                error: e.to_string(),
                violations,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub workflow_id: Option<String>,
    /// Initial draft, e.g. an existing workflow file.
    #[serde(default)]
    pub workflow: Option<WorkflowFile>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SetParams {
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectLoad {
    pub node_id: String,
    pub sid: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecuteRequest {
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteResponse {
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub store: StoreStats,
    pub rules: u64,
    pub sessions: u64,
    pub runs: u64,
}

/// Parses an optional JSON body; an empty body yields the default.
fn optional_body<T: Default + for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = optional_body(&body)?;
    let graph = match req.workflow {
        Some(file) => WorkflowGraph::from_file(file, &st.inner.catalog)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?,
        None => WorkflowGraph::new(req.workflow_id.unwrap_or_else(|| "draft".to_string())),
    };
    Ok((StatusCode::CREATED, Json(st.create_session(graph))))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    st.with_session(&id, |s| Ok(Json(s.view())))
}

async fn add_node(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(node): Json<WorkflowNodeFile>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.add_node(node))
}

async fn remove_node(
    State(st): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.remove_node(&nid))
}

async fn set_params(
    State(st): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
    Json(req): Json<SetParams>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.set_params(&nid, &req.params))
}

async fn connect(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(edge): Json<Edge>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.connect(edge))
}

async fn disconnect(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(edge): Json<Edge>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.disconnect(&edge))
}

async fn bind_input(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(binding): Json<InputBinding>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.bind_input(binding))
}

async fn declare_output(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(port): Json<PortRef>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.declare_output(port))
}

async fn check_node(
    State(st): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<CheckResult>> {
    let timing = st.timing();
    let rules = st.inner.rules.clone();
    let store = st.inner.store.clone();
    st.with_session(&id, |s| {
        let rules = rules.read().unwrap();
        s.check(&nid, &rules, &store, &timing).map(Json)
    })
}

async fn check_all(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<BTreeMap<String, CheckResult>>> {
    let timing = st.timing();
    let rules = st.inner.rules.clone();
    let store = st.inner.store.clone();
    st.with_session(&id, |s| {
        let rules = rules.read().unwrap();
        s.check_all(&rules, &store, &timing).map(Json)
    })
}

async fn select_load(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SelectLoad>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.select_load(&req.node_id, &req.sid))
}

async fn clear_load(
    State(st): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<SessionView>> {
    st.mutate(&id, |s| s.clear_load(&nid))
}

async fn execute(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<ExecuteResponse>)> {
    let req: ExecuteRequest = optional_body(&body)?;
    let workers = req.workers.unwrap_or(st.inner.config.workers).max(1);
    let handle = st.with_session(&id, |s| s.execute(workers))?;
    let run_id = handle.run_id();
    st.inner.runs.write().unwrap().insert(run_id.clone(), handle);
    Ok((StatusCode::ACCEPTED, Json(ExecuteResponse { run_id })))
}

async fn run_status(State(st): State<AppState>, Path(rid): Path<String>) -> ApiResult<Json<RunView>> {
    let run = st
        .inner
        .runs
        .read()
        .unwrap()
        .get(&rid)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown run `{rid}`")))?;
    Ok(Json(run.view()))
}

async fn metrics(State(st): State<AppState>) -> Json<Metrics> {
    Json(Metrics {
        store: st.inner.store.stats(),
        rules: st.inner.rules.read().unwrap().len() as u64,
        sessions: st.inner.sessions.read().unwrap().len() as u64,
        runs: st.inner.runs.read().unwrap().len() as u64,
    })
}

async fn rules(State(st): State<AppState>) -> String {
    rules_report(&st.inner.rules.read().unwrap())
}

async fn history(
    State(st): State<AppState>,
    Query(filter): Query<RecordFilter>,
) -> Json<Vec<ExecutionRecord>> {
    Json(st.inner.store.query_records(&filter))
}

async fn catalog(State(st): State<AppState>) -> Response {
    (
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        st.inner.catalog.to_json(),
    )
        .into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/nodes", post(add_node))
        .route("/sessions/{id}/nodes/{nid}", delete(remove_node))
        .route("/sessions/{id}/nodes/{nid}/params", put(set_params))
        .route("/sessions/{id}/edges", post(connect).delete(disconnect))
        .route("/sessions/{id}/inputs", post(bind_input))
        .route("/sessions/{id}/outputs", post(declare_output))
        .route("/sessions/{id}/check", post(check_all))
        .route("/sessions/{id}/check/{nid}", post(check_node))
        .route("/sessions/{id}/load", post(select_load))
        .route("/sessions/{id}/load/{nid}", delete(clear_load))
        .route("/sessions/{id}/execute", post(execute))
        .route("/runs/{rid}", get(run_status))
        .route("/metrics", get(metrics))
        .route("/rules", get(rules))
        .route("/history", get(history))
        .route("/catalog", get(catalog))
        .with_state(state)
}

/// Serves the API on `listener` until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
