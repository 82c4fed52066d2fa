//! JSON-over-HTTP adapter for the workbench. Handlers only translate
//! requests into library calls; every number comes from `milt-core`.
//!
//! Dataset endpoints are stateless. Sessions are keyed by a UUID and each
//! one serializes its mutations behind a mutex.

pub mod error;
pub mod state;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use milt_core::session::ErrorBranch;
use milt_core::{
    Action, ClassMatchReport, Method, SelectionConfig, Scope, Session, SessionFile, SvmConfig, SvmVariant, TrainingMode,
};

pub use error::{ApiError, ApiResult};
pub use state::AppState;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn parse<T: std::str::FromStr<Err = milt_core::Error>>(value: Option<&str>, default: T) -> ApiResult<T> {
    value.map_or(Ok(default), |v| v.parse().map_err(ApiError::from))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/tree", get(dataset_tree))
        .route("/datasets/{id}/bags/{bag}/tree", get(dataset_bag_tree))
        .route("/sessions", post(create_session))
        .route("/sessions/import", post(import_session))
        .route("/sessions/{sid}", get(get_session).delete(delete_session))
        .route("/sessions/{sid}/training", put(set_training))
        .route("/sessions/{sid}/train", post(train))
        .route("/sessions/{sid}/actions", post(apply_action))
        .route("/sessions/{sid}/classmatch", get(classmatch))
        .route("/sessions/{sid}/error-branches", get(error_branches))
        .route("/sessions/{sid}/suggest", get(suggest))
        .route("/sessions/{sid}/export", get(export))
        .route("/sessions/{sid}/tree", get(session_tree))
        .route("/sessions/{sid}/bags/{bag}/tree", get(session_bag_tree))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// A bound listener plus the service, ready to run.
pub struct Server {
    listener: tokio::net::TcpListener,
    app: Router,
}

impl Server {
    pub async fn bind(addr: SocketAddr, data_dir: impl Into<PathBuf>) -> io::Result<Self> {
        let state = AppState::new(data_dir)?;
        let listener = tokio::net::TcpListener::bind(addr).await?;
        Ok(Self {
            listener,
            app: router(state),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> io::Result<()> {
        axum::serve(self.listener, self.app).await
    }
}

pub async fn serve(addr: SocketAddr, data_dir: impl Into<PathBuf>) -> io::Result<()> {
    Server::bind(addr, data_dir).await?.run().await
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub bags: usize,
    pub classes: usize,
}

async fn list_datasets(State(st): State<AppState>) -> ApiResult<Json<Vec<DatasetInfo>>> {
    blocking(move || {
        st.files()?
            .into_keys()
            .map(|name| {
                let ds = st.dataset(&name)?;
                Ok(DatasetInfo {
                    name,
                    bags: ds.len(),
                    classes: ds.n_classes(),
                })
            })
            .collect::<ApiResult<Vec<_>>>()
            .map(Json)
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct MethodQuery {
    method: Option<String>,
}

fn with_header(mut v: Value, fields: &[(&str, Value)]) -> Value {
    if let Value::Object(m) = &mut v {
        for (k, x) in fields {
            m.insert((*k).to_string(), x.clone());
        }
    }
    v
}

async fn dataset_tree(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<MethodQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let method = parse(q.method.as_deref(), Method::Med)?;
    blocking(move || {
        let tree = st.tree(&id, method, &SelectionConfig::default())?;
        let positions = milt_core::classify_positions(&tree);
        Ok(Json(with_header(
            tree.layout_json(&positions),
            &[("dataset", id.into()), ("method", method.to_string().into())],
        )))
    })
    .await
}

async fn dataset_bag_tree(
    State(st): State<AppState>,
    Path((id, bag)): Path<(String, String)>,
    q: Result<Query<MethodQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let method = parse(q.method.as_deref(), Method::Med)?;
    blocking(move || {
        let tree = st.tree(&id, method, &SelectionConfig::default())?;
        Ok(Json(tree.instance_tree_json(&bag, None)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    dataset: String,
    method: Option<String>,
    svm: Option<String>,
    c: Option<f64>,
    nu: Option<f64>,
    tolerance: Option<f64>,
    scale: Option<bool>,
    selection: Option<SelectionConfig>,
}

impl CreateSession {
    fn svm_config(&self) -> ApiResult<SvmConfig> {
        let mut cfg = SvmConfig {
            variant: parse(self.svm.as_deref(), SvmVariant::Nu)?,
            ..SvmConfig::default()
        };
        if let Some(c) = self.c {
            cfg.c = c;
        }
        if let Some(nu) = self.nu {
            cfg.nu = nu;
        }
        if let Some(t) = self.tolerance {
            cfg.tolerance = t;
        }
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Session state as returned by the session endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    #[serde(flatten)]
    pub state: SessionFile,
}

fn view(id: &str, s: &Session) -> SessionView {
    SessionView {
        session_id: id.to_string(),
        state: s.save(),
    }
}

async fn create_session(State(st): State<AppState>, bytes: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = body(&bytes)?;
    let method = parse(req.method.as_deref(), Method::Med)?;
    let svm = req.svm_config()?;
    let selection = req.selection.unwrap_or_default();
    blocking(move || {
        let tree = st.tree(&req.dataset, method, &selection)?;
        let session = Session::new(tree, svm);
        let v = view("", &session);
        let id = st.insert_session(session)?.to_string();
        Ok((
            StatusCode::CREATED,
            Json(SessionView {
                session_id: id,
                ..v
            }),
        ))
    })
    .await
}

async fn import_session(State(st): State<AppState>, bytes: Bytes) -> ApiResult<impl IntoResponse> {
    let file: SessionFile = body(&bytes)?;
    blocking(move || {
        let tree = st.tree(&file.dataset, file.method, &file.selection)?;
        let session = Session::load(&file, tree)?;
        let v = view("", &session);
        let id = st.insert_session(session)?.to_string();
        Ok((
            StatusCode::CREATED,
            Json(SessionView {
                session_id: id,
                ..v
            }),
        ))
    })
    .await
}

async fn get_session(State(st): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<SessionView>> {
    blocking(move || st.with_session(&sid, |s| Ok(Json(view(&sid, s))))).await
}

async fn delete_session(State(st): State<AppState>, Path(sid): Path<String>) -> ApiResult<StatusCode> {
    st.remove_session(&sid)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingBody {
    bag_ids: Vec<String>,
}

async fn set_training(
    State(st): State<AppState>,
    Path(sid): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<SessionView>> {
    let req: TrainingBody = body(&bytes)?;
    blocking(move || {
        st.with_session(&sid, |s| {
            s.set_training(&req.bag_ids)?;
            Ok(Json(view(&sid, s)))
        })
    })
    .await
}

async fn train(State(st): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<ClassMatchReport>> {
    blocking(move || st.with_session(&sid, |s| Ok(Json(s.train()?)))).await
}

async fn apply_action(
    State(st): State<AppState>,
    Path(sid): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<SessionView>> {
    let action: Action = body(&bytes)?;
    blocking(move || {
        st.with_session(&sid, |s| {
            s.apply(action)?;
            Ok(Json(view(&sid, s)))
        })
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct ScopeQuery {
    scope: Option<String>,
}

async fn classmatch(
    State(st): State<AppState>,
    Path(sid): Path<String>,
    q: Result<Query<ScopeQuery>, QueryRejection>,
) -> ApiResult<Json<ClassMatchReport>> {
    let scope = parse(query(q)?.scope.as_deref(), Scope::All)?;
    blocking(move || st.with_session(&sid, |s| Ok(Json(s.classmatch(scope)?)))).await
}

async fn error_branches(State(st): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<Vec<ErrorBranch>>> {
    blocking(move || {
        st.with_session(&sid, |s| {
            let report = s.classmatch_all()?;
            Ok(Json(s.error_branches(&report)))
        })
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct SuggestQuery {
    fraction: Option<f64>,
    mode: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub fraction: f64,
    pub mode: TrainingMode,
    pub seed: u64,
    pub bag_ids: Vec<String>,
}

async fn suggest(
    State(st): State<AppState>,
    Path(sid): Path<String>,
    q: Result<Query<SuggestQuery>, QueryRejection>,
) -> ApiResult<Json<Suggestion>> {
    let q = query(q)?;
    let fraction = q.fraction.unwrap_or(0.3);
    let mode = parse(q.mode.as_deref(), TrainingMode::Combined)?;
    let seed = q.seed.unwrap_or(1);
    blocking(move || {
        st.with_session(&sid, |s| {
            Ok(Json(Suggestion {
                fraction,
                mode,
                seed,
                bag_ids: s.suggest(fraction, seed, mode)?,
            }))
        })
    })
    .await
}

async fn export(State(st): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<SessionFile>> {
    blocking(move || st.with_session(&sid, |s| Ok(Json(s.save())))).await
}

async fn session_tree(State(st): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        st.with_session(&sid, |s| {
            let json = s.tree().export_json(&s.positions(), Some(s.slots()));
            Ok(Json(with_header(
                json,
                &[
                    ("dataset", s.dataset().name().into()),
                    ("method", s.tree().method().to_string().into()),
                ],
            )))
        })
    })
    .await
}

async fn session_bag_tree(
    State(st): State<AppState>,
    Path((sid, bag)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        st.with_session(&sid, |s| {
            let b = s.dataset().bag_index(&bag)?;
            Ok(Json(s.tree().instance_tree_json(&bag, Some(&s.slots()[b]))?))
        })
    })
    .await
}
