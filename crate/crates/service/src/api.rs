use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use driftscope_core::concept::ConceptStore;
use driftscope_core::data::parse_timestamp;
use driftscope_core::pipeline::AnalysisBundle;

use crate::views::{self, AccuracyQuery, ApiFailure, CompareRequest, IdentifyRequest, MatrixRequest};

pub const DEFAULT_MAX_POINTS: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub bundle: Arc<AnalysisBundle>,
    pub store: Arc<Mutex<ConceptStore>>,
}

impl AppState {
    pub fn new(bundle: AnalysisBundle, store: ConceptStore) -> Self {
        Self { bundle: Arc::new(bundle), store: Arc::new(Mutex::new(store)) }
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiFailure>;

fn to_json<T: serde::Serialize>(value: &T) -> ApiResult {
    serde_json::to_value(value)
        .map(Json)
        .map_err(|e| ApiFailure { status: 500, code: "serialization", message: e.to_string() })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/schema", get(schema))
        .route("/api/timeline", get(timeline))
        .route("/api/accuracy", get(accuracy))
        .route("/api/trajectories", get(trajectories))
        .route("/api/consistency", get(consistency))
        .route("/api/recommend", get(recommend))
        .route("/api/concept/matrix", post(matrix))
        .route("/api/concept/compare", post(compare))
        .route("/api/concepts", get(list_concepts).post(identify))
        .route("/api/concepts/{id}", get(get_concept))
        .fallback(|| async { ApiFailure::not_found("not_found", "no such endpoint") })
        .with_state(state)
}

async fn schema(State(s): State<AppState>) -> ApiResult {
    to_json(&views::schema_view(&s.bundle))
}

async fn timeline(State(s): State<AppState>) -> ApiResult {
    to_json(&views::timeline_view(&s.bundle))
}

#[derive(Debug, Deserialize)]
struct AccuracyParams {
    source: Option<String>,
    from: Option<usize>,
    to: Option<usize>,
    max_points: Option<usize>,
    c: Option<f64>,
}

async fn accuracy(State(s): State<AppState>, Query(p): Query<AccuracyParams>) -> ApiResult {
    let view = views::accuracy_view(
        &s.bundle,
        AccuracyQuery {
            source: p.source.as_deref(),
            from: p.from,
            to: p.to,
            max_points: p.max_points.unwrap_or(DEFAULT_MAX_POINTS),
            c: p.c,
        },
    )?;
    to_json(&view)
}

#[derive(Debug, Deserialize)]
struct WindowParams {
    from: Option<usize>,
    to: Option<usize>,
}

async fn trajectories(State(s): State<AppState>, Query(p): Query<WindowParams>) -> ApiResult {
    views::trajectories_view(&s.bundle, p.from, p.to).map(Json)
}

#[derive(Debug, Deserialize)]
struct ConsistencyParams {
    c: Option<f64>,
}

async fn consistency(State(s): State<AppState>, Query(p): Query<ConsistencyParams>) -> ApiResult {
    views::consistency_view(&s.bundle, p.c).map(Json)
}

#[derive(Debug, Deserialize)]
struct RecommendParams {
    source: Option<String>,
    t: Option<String>,
}

async fn recommend(State(s): State<AppState>, Query(p): Query<RecommendParams>) -> ApiResult {
    let source = p.source.ok_or_else(|| ApiFailure::bad_request("missing_parameter", "`source` is required"))?;
    let raw = p.t.ok_or_else(|| ApiFailure::bad_request("missing_parameter", "`t` is required"))?;
    let t = parse_timestamp(&raw)
        .ok_or_else(|| ApiFailure::bad_request("invalid_timestamp", format!("cannot parse `{raw}`")))?;
    to_json(&views::recommend_view(&s.bundle, &source, t)?)
}

async fn matrix(State(s): State<AppState>, Json(req): Json<MatrixRequest>) -> ApiResult {
    to_json(&views::concept_matrix(&s.bundle, &req)?)
}

async fn compare(State(s): State<AppState>, Json(req): Json<CompareRequest>) -> ApiResult {
    let stored = {
        let store = s.store.lock().expect("store lock");
        store
            .get(req.concept_id)
            .cloned()
            .ok_or_else(|| ApiFailure::not_found("unknown_concept", format!("no concept {}", req.concept_id)))?
    };
    to_json(&views::compare_view(&s.bundle, &stored, &req.context)?)
}

async fn list_concepts(State(s): State<AppState>) -> ApiResult {
    let store = s.store.lock().expect("store lock");
    to_json(&store.list())
}

async fn identify(State(s): State<AppState>, Json(req): Json<IdentifyRequest>) -> Result<(StatusCode, Json<Value>), ApiFailure> {
    let draft = views::concept_draft(&s.bundle, &req)?;
    let id = s.store.lock().expect("store lock").identify(draft)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_concept(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    let store = s.store.lock().expect("store lock");
    let record = store.get(id).ok_or_else(|| ApiFailure::not_found("unknown_concept", format!("no concept {id}")))?;
    to_json(record)
}
