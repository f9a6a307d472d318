use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{from_fn_with_state, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use mvforge_core::chartspec::{
    assign_encodings, vegalite_value, Channel, ChartSpec, ChartType, Encoding, TableSchema, Transform,
};
use mvforge_core::ingest::parse_csv;
use mvforge_core::mvrank::{score_mv, LayoutCell, MvChart, MvState, ScoredChart};
use mvforge_core::neural::ModelKind;
use mvforge_core::pairgen::MAX_TABLE_COLUMNS;
use mvforge_core::provenance::{EventKind, MvEdit};
use mvforge_core::ranker::score_columns;
use mvforge_core::recommend::{chart_ideas, recommend_mv, LearnedObjective, TableContext};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::state::{AppState, Models, SessionEntry};
use crate::train::{train_from_file, TrainOverrides};
use crate::API_VERSION;

type ApiResult<T> = Result<T, ApiError>;

/// `Json` whose rejections use the API error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> ApiResult<Self> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(ApiError::new(r.status(), "invalid_body", r.body_text())),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    // Each successful call here appends exactly one provenance event.
    let mutating = Router::new()
        .route("/api/datasets", post(upload))
        .route("/api/sessions/{id}/recommend-mv", post(recommend))
        .route("/api/sessions/{id}/charts", post(add_chart))
        .route("/api/sessions/{id}/charts/{pos}", patch(edit_chart).delete(remove_chart))
        .route("/api/sessions/{id}/restore", post(restore))
        .route("/api/sessions/{id}/save", post(save))
        .route("/api/sessions/{id}/events", post(log_event))
        .route_layer(from_fn_with_state(state.clone(), count_mutating));
    let other = Router::new()
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/data", get(get_data))
        .route("/api/sessions/{id}/history", get(history))
        .route("/api/sessions/{id}/chart-ideas", post(ideas))
        .route("/api/chart-options", get(chart_options))
        .route("/api/admin/stats", get(stats))
        .route("/api/admin/train", post(train));
    Router::new()
        .merge(mutating)
        .merge(other)
        .route_layer(from_fn_with_state(state.clone(), auth))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::max(state.config.max_upload_bytes))
        .with_state(state)
}

async fn auth(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.api_token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn count_mutating(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let response = next.run(req).await;
    if response.status().is_success() {
        state.audit.mutating_responses.fetch_add(1, Ordering::SeqCst);
    }
    response
}

/// Runs `f` on the locked session off the async runtime and counts the
/// events it appends.
async fn with_session<T, F>(state: &Arc<AppState>, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut SessionEntry, &Models, &AppState) -> ApiResult<T> + Send + 'static,
{
    let entry = state.session(id)?;
    let models = state.models();
    let state = state.clone();
    let mut guard = entry.lock_owned().await;
    tokio::task::spawn_blocking(move || {
        let before = guard.session.log().events.len();
        let out = f(&mut guard, &models, &state);
        let appended = guard.session.log().events.len() - before;
        state.audit.events_appended.fetch_add(appended as u64, Ordering::SeqCst);
        out
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

fn model_ids(models: &Models) -> Value {
    json!({"single_chart": models.single_id, "mv": models.mv_id})
}

fn score_json(s: &ScoredChart) -> Value {
    json!({"s_data": s.s_data, "p_type": s.p_type, "s_overall": s.s_data * s.p_type})
}

fn chart_json(chart: &MvChart, schema: &TableSchema) -> ApiResult<Value> {
    let mut value = serde_json::to_value(chart).map_err(|e| ApiError::internal(e.to_string()))?;
    value["vegalite"] = vegalite_value(&chart.spec, schema);
    Ok(value)
}

fn spec_json(spec: &ChartSpec, schema: &TableSchema) -> ApiResult<Value> {
    let mut value = serde_json::to_value(spec).map_err(|e| ApiError::internal(e.to_string()))?;
    value["vegalite"] = vegalite_value(spec, schema);
    Ok(value)
}

/// The current MV with its scores, as returned by every session call.
fn session_view(entry: &SessionEntry, models: &Models) -> ApiResult<Value> {
    let ctx = entry.context(models);
    let mv = entry.session.current();
    let scored = ctx.score_specs(mv.charts.iter().map(|c| &c.spec))?;
    let mv_score = if scored.is_empty() {
        Value::Null
    } else {
        json!(score_mv(&models.mv.model, &scored, ctx.n_columns())?)
    };
    let charts = mv
        .charts
        .iter()
        .map(|c| chart_json(c, ctx.schema))
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(json!({
        "api_version": API_VERSION,
        "session_id": entry.session.id(),
        "charts": charts,
        "locked": mv.charts.iter().map(|c| c.locked).collect::<Vec<_>>(),
        "scores": {
            "mv_score": mv_score,
            "per_chart": scored.iter().map(score_json).collect::<Vec<_>>(),
        },
        "models": model_ids(models),
        "seq": entry.session.log().events.last().map(|e| e.seq),
    }))
}

fn tile(i: usize) -> LayoutCell {
    LayoutCell {
        x: (i as u32 % 2) * 6,
        y: (i as u32 / 2) * 4,
        w: 6,
        h: 4,
    }
}

fn below(mv: &MvState) -> LayoutCell {
    let y = mv.charts.iter().map(|c| c.layout.y + c.layout.h).max().unwrap_or(0);
    LayoutCell { x: 0, y, w: 6, h: 4 }
}

/// A spec from columns plus optional type and encodings. Without a type the
/// single-chart model's best type is used; without encodings they are
/// assigned heuristically.
fn resolve_spec(
    ctx: &TableContext,
    columns: BTreeSet<usize>,
    chart_type: Option<ChartType>,
    encodings: Option<BTreeMap<Channel, Encoding>>,
) -> ApiResult<ChartSpec> {
    match encodings {
        Some(encodings) => {
            let chart_type =
                chart_type.ok_or_else(|| ApiError::unprocessable("chart_type is required with explicit encodings"))?;
            let spec = ChartSpec {
                columns,
                chart_type,
                encodings,
            };
            spec.validate(ctx.n_columns())?;
            Ok(spec)
        }
        None => {
            let chart_type = match chart_type {
                Some(t) => t,
                None => {
                    if let Some(&bad) = columns.iter().find(|&&c| c >= ctx.n_columns()) {
                        return Err(mvforge_core::Error::Index {
                            index: bad,
                            len: ctx.n_columns(),
                        }
                        .into());
                    }
                    score_columns(ctx.single, ctx.features, &columns)?.best_type()
                }
            };
            Ok(assign_encodings(ctx.schema, &columns, chart_type)?)
        }
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let models = state.models();
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "api_version": API_VERSION,
        "models": model_ids(&models),
    }))
}

async fn upload(State(state): State<Arc<AppState>>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut file = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), "bad_upload", e.body_text()))?
    {
        let name = field.file_name().map(str::to_string);
        let is_file = name.is_some() || field.name() == Some("file");
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(e.status(), "bad_upload", e.body_text()))?;
        if is_file {
            file = Some((name.unwrap_or_else(|| "upload.csv".into()), bytes));
            break;
        }
    }
    let (name, bytes) = file.ok_or_else(|| ApiError::bad_request("expected a multipart field named \"file\""))?;
    let table = tokio::task::spawn_blocking(move || parse_csv(&bytes, &name))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let mut warnings = Vec::new();
    if table.column_count() > MAX_TABLE_COLUMNS {
        warnings.push(format!(
            "table has {} columns; recommendations consider a capped candidate pool",
            table.column_count()
        ));
    }
    let summary = table.summary();
    let (id, entry) = state.open_session(table);
    let models = state.models();
    let view = session_view(&*entry.lock().await, &models)?;
    tracing::info!(session = %id, columns = summary.columns.len(), "table uploaded");
    let mut body = json!({"table": summary, "warnings": warnings});
    merge(&mut body, view);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(into), Value::Object(from)) = (into, from) {
        into.extend(from);
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ChartRef {
    Position { position: usize },
    Spec(ChartRequest),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChartRequest {
    columns: BTreeSet<usize>,
    #[serde(default)]
    chart_type: Option<ChartType>,
    #[serde(default)]
    encodings: Option<BTreeMap<Channel, Encoding>>,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendRequest {
    n_charts: usize,
    /// Charts to keep; defaults to the locked charts of the current MV.
    #[serde(default)]
    locked: Option<Vec<ChartRef>>,
    #[serde(default = "default_true")]
    drop_alternative_types: bool,
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<RecommendRequest>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, state| {
        let current = entry.session.current().clone();
        let locked: Vec<MvChart> = {
            let ctx = entry.context(models);
            match req.locked {
                None => current.charts.iter().filter(|c| c.locked).cloned().collect(),
                Some(refs) => refs
                    .into_iter()
                    .map(|r| match r {
                        ChartRef::Position { position } => current.charts.get(position).cloned().ok_or_else(|| {
                            ApiError::from(mvforge_core::Error::Infeasible(format!(
                                "no chart at position {position} to lock"
                            )))
                        }),
                        ChartRef::Spec(c) => resolve_spec(&ctx, c.columns, c.chart_type, c.encodings)
                            .map(MvChart::new)
                            .map_err(|e| ApiError::new(e.status, "infeasible_request", e.message)),
                    })
                    .collect::<ApiResult<_>>()?,
            }
        };
        let pool = entry.pool(models, req.drop_alternative_types, state.config.wide_table_cap)?;
        let ctx = entry.context(models);
        let objective = LearnedObjective {
            model: &models.mv.model,
            n_table_columns: ctx.n_columns(),
        };
        let mut rec = recommend_mv(&ctx, &pool, &locked, req.n_charts, &objective)?;
        for (i, chart) in rec.mv.charts.iter_mut().enumerate() {
            chart.layout = tile(i);
        }
        let payload = json!({
            "n_charts": req.n_charts,
            "locked": locked.len(),
            "mv_score": rec.mv_score,
            "models": model_ids(models),
        });
        entry
            .session
            .record(EventKind::RecommendMvRequest, Some(MvEdit::Replace { mv: rec.mv }), payload)?;
        let mut view = session_view(entry, models)?;
        view["steps"] = serde_json::to_value(&rec.steps).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Json(view))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdeasRequest {
    #[serde(default)]
    must_include: BTreeSet<usize>,
    #[serde(default = "default_true")]
    drop_alternative_types: bool,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    10
}

async fn ideas(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<IdeasRequest>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, state| {
        let n = entry.session.schema().len();
        if let Some(&bad) = req.must_include.iter().find(|&&c| c >= n) {
            return Err(mvforge_core::Error::Index { index: bad, len: n }.into());
        }
        if req.limit == 0 {
            return Err(ApiError::unprocessable("limit must be at least 1"));
        }
        let pool = entry.pool(models, req.drop_alternative_types, state.config.wide_table_cap)?;
        let ctx = entry.context(models);
        let objective = LearnedObjective {
            model: &models.mv.model,
            n_table_columns: n,
        };
        let found = chart_ideas(&ctx, &pool, entry.session.current(), &req.must_include, req.limit, &objective)?;
        let ideas = found
            .iter()
            .map(|idea| {
                let mut v = spec_json(&idea.spec, ctx.schema)?;
                v["score"] = json!({
                    "s_data": idea.score.s_data,
                    "s_overall": idea.score.overall(idea.spec.chart_type),
                });
                v["projected_score"] = json!(idea.projected_score);
                Ok(v)
            })
            .collect::<ApiResult<Vec<_>>>()?;
        Ok(Json(json!({
            "api_version": API_VERSION,
            "ideas": ideas,
            "models": model_ids(models),
        })))
    })
    .await
}

#[derive(Deserialize, Default, PartialEq)]
#[serde(rename_all = "snake_case")]
enum ChartSource {
    #[default]
    Editor,
    ChartIdeas,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddChartRequest {
    columns: BTreeSet<usize>,
    #[serde(default)]
    chart_type: Option<ChartType>,
    #[serde(default)]
    encodings: Option<BTreeMap<Channel, Encoding>>,
    #[serde(default)]
    position: Option<usize>,
    #[serde(default)]
    layout: Option<LayoutCell>,
    #[serde(default)]
    locked: bool,
    #[serde(default)]
    source: ChartSource,
}

async fn add_chart(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<AddChartRequest>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, _| {
        let spec = resolve_spec(&entry.context(models), req.columns, req.chart_type, req.encodings)?;
        let chart = MvChart {
            spec,
            locked: req.locked,
            layout: req.layout.unwrap_or_else(|| below(entry.session.current())),
        };
        let kind = match req.source {
            ChartSource::ChartIdeas => EventKind::ChartIdeasClick,
            ChartSource::Editor => EventKind::AddChart,
        };
        entry.session.record(
            kind,
            Some(MvEdit::Add {
                chart,
                position: req.position,
            }),
            Value::Null,
        )?;
        Ok(Json(session_view(entry, models)?))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditChartRequest {
    #[serde(default)]
    columns: Option<BTreeSet<usize>>,
    #[serde(default)]
    chart_type: Option<ChartType>,
    #[serde(default)]
    encodings: Option<BTreeMap<Channel, Encoding>>,
    /// Per-channel transform changes; `null` clears a transform.
    #[serde(default)]
    transforms: Option<BTreeMap<Channel, Option<Transform>>>,
    #[serde(default)]
    layout: Option<LayoutCell>,
    #[serde(default)]
    locked: Option<bool>,
}

async fn edit_chart(
    State(state): State<Arc<AppState>>,
    Path((id, pos)): Path<(String, usize)>,
    ApiJson(req): ApiJson<EditChartRequest>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, _| {
        entry.chart(pos)?;
        let old = entry.session.current().charts[pos].clone();
        let ctx = entry.context(models);
        let chart_type = req.chart_type.unwrap_or(old.spec.chart_type);
        let mut spec = match req.encodings {
            Some(encodings) => {
                let columns = req
                    .columns
                    .unwrap_or_else(|| encodings.values().filter_map(|e| e.field).collect());
                ChartSpec {
                    columns,
                    chart_type,
                    encodings,
                }
            }
            None if req.columns.is_some() || req.chart_type.is_some() => assign_encodings(
                ctx.schema,
                req.columns.as_ref().unwrap_or(&old.spec.columns),
                chart_type,
            )?,
            None => old.spec.clone(),
        };
        for (channel, transform) in req.transforms.unwrap_or_default() {
            let encoding = spec
                .encodings
                .get_mut(&channel)
                .ok_or_else(|| ApiError::unprocessable(format!("chart has no {} channel", channel.as_str())))?;
            encoding.transform = transform;
        }
        spec.validate(ctx.n_columns())?;
        let chart = MvChart {
            spec,
            locked: req.locked.unwrap_or(old.locked),
            layout: req.layout.unwrap_or(old.layout),
        };
        let kind = if chart.spec.chart_type != old.spec.chart_type {
            EventKind::ChangeType
        } else if chart.spec != old.spec {
            EventKind::EditEncoding
        } else if chart.locked != old.locked {
            if chart.locked {
                EventKind::LockChart
            } else {
                EventKind::UnlockChart
            }
        } else if (chart.layout.w, chart.layout.h) != (old.layout.w, old.layout.h) {
            EventKind::ResizeChart
        } else if chart.layout != old.layout {
            EventKind::MoveChart
        } else {
            EventKind::EditEncoding
        };
        entry.session.record(
            kind,
            Some(MvEdit::SetChart {
                position: pos,
                chart,
            }),
            Value::Null,
        )?;
        Ok(Json(session_view(entry, models)?))
    })
    .await
}

async fn remove_chart(
    State(state): State<Arc<AppState>>,
    Path((id, pos)): Path<(String, usize)>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, _| {
        entry.chart(pos)?;
        entry
            .session
            .record(EventKind::RemoveChart, Some(MvEdit::Remove { position: pos }), Value::Null)?;
        Ok(Json(session_view(entry, models)?))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RestoreRequest {
    seq: u64,
}

async fn restore(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<RestoreRequest>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, _| {
        entry.session.restore(req.seq)?;
        let mut view = session_view(entry, models)?;
        view["restored_seq"] = json!(req.seq);
        Ok(Json(view))
    })
    .await
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, _, _| {
        Ok(Json(json!({
            "api_version": API_VERSION,
            "session_id": entry.session.id(),
            "versions": entry.session.history(),
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveRequest {
    consent: bool,
}

async fn save(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SaveRequest>,
) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, _, state| {
        let stored = entry.session.save(req.consent, &state.config.logs_dir())?;
        Ok(Json(json!({
            "api_version": API_VERSION,
            "session_id": entry.session.id(),
            "consent": req.consent,
            "stored": stored.is_some(),
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRequest {
    kind: EventKind,
    #[serde(default)]
    payload: Value,
}

/// Client-side interactions that do not change the MV.
async fn log_event(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<EventRequest>,
) -> ApiResult<Json<Value>> {
    if req.kind != EventKind::CrossFilter {
        return Err(ApiError::unprocessable("only cross_filter events can be logged directly"));
    }
    with_session(&state, &id, move |entry, _, _| {
        let seq = entry.session.record(req.kind, None, req.payload)?.seq;
        Ok(Json(json!({"api_version": API_VERSION, "seq": seq})))
    })
    .await
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, models, _| {
        let mut view = session_view(entry, models)?;
        view["table"] = serde_json::to_value(&entry.session.log().header.table)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Json(view))
    })
    .await
}

/// Row-major cell values for client-side rendering; absent cells are null.
async fn get_data(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    with_session(&state, &id, move |entry, _, _| {
        let table = &entry.table;
        let rows: Vec<Vec<Option<&str>>> = (0..table.row_count)
            .map(|r| table.columns.iter().map(|c| c.values[r].as_deref()).collect())
            .collect();
        Ok(Json(json!({
            "api_version": API_VERSION,
            "headers": table.columns.iter().map(|c| &c.header).collect::<Vec<_>>(),
            "types": table.columns.iter().map(|c| c.inferred_type).collect::<Vec<_>>(),
            "rows": rows,
        })))
    })
    .await
}

fn channels(chart_type: ChartType) -> Vec<Channel> {
    match chart_type {
        ChartType::Pie => vec![Channel::Theta, Channel::Color],
        _ => vec![
            Channel::X,
            Channel::Y,
            Channel::Color,
            Channel::Size,
            Channel::Column,
            Channel::Row,
        ],
    }
}

async fn chart_options() -> Json<Value> {
    let types: Vec<Value> = ChartType::ALL
        .iter()
        .map(|&t| json!({"chart_type": t, "mark": t.mark(), "channels": channels(t)}))
        .collect();
    Json(json!({
        "api_version": API_VERSION,
        "chart_types": types,
        "transforms": [Transform::Bin, Transform::Mean, Transform::Sum, Transform::Count],
    }))
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "api_version": API_VERSION,
        "sessions": state.session_count(),
        "mutating_responses": state.audit.mutating_responses.load(Ordering::SeqCst),
        "events_appended": state.audit.events_appended.load(Ordering::SeqCst),
        "models": model_ids(&state.models()),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    kind: ModelKind,
    pairs_path: PathBuf,
    #[serde(default)]
    config: TrainOverrides,
    /// Swap the new model in once trained.
    #[serde(default = "default_true")]
    activate: bool,
}

async fn train(State(state): State<Arc<AppState>>, ApiJson(req): ApiJson<TrainRequest>) -> ApiResult<Json<Value>> {
    if !req.pairs_path.is_file() {
        return Err(ApiError::bad_request(format!("no pairs file at {}", req.pairs_path.display())));
    }
    let guard = state.try_begin_training(req.kind).ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "training_in_progress",
            format!("a {} model is already training", req.kind.as_str()),
        )
    })?;
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let bundle = train_from_file(req.kind, &req.pairs_path, &req.config)?;
        let id = bundle.id();
        let path = state.config.models_dir().join(format!("{}-{id}.json", req.kind.as_str()));
        std::fs::create_dir_all(state.config.models_dir()).map_err(mvforge_core::Error::from)?;
        bundle.save(&path)?;
        if req.activate {
            let next = state.models().with(bundle.clone())?;
            state.swap_models(next);
            tracing::info!(kind = req.kind.as_str(), model = %id, "model swapped in");
        }
        Ok(Json(json!({
            "api_version": API_VERSION,
            "kind": req.kind,
            "model_id": id,
            "path": path,
            "pair_count": bundle.training.pair_count,
            "epochs": bundle.training.epochs,
            "epoch_losses": bundle.training.epoch_losses,
            "activated": req.activate,
            "models": model_ids(&state.models()),
        })))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}
