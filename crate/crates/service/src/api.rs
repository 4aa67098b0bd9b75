//! HTTP routes. Handlers are thin: they decode JSON, hand the work to
//! [`App`] on the blocking pool and encode the result.

use crate::app::{App, ApplyRequest, CreateSessionRequest, PromptInput};
use crate::error::{ApiError, ApiResult};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use curate_core::corpus::Comment;
use curate_core::label::LabeledExample;
use curate_core::rules::Rule;
use curate_core::{Decision, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::Arc;

type Shared = Arc<App>;

async fn run<T, F>(app: Shared, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&App) -> ApiResult<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&app)).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v).map_err(|e| ApiError::invalid(e.body_text()))
}

fn strategy(s: &str) -> ApiResult<Strategy> {
    s.parse::<Strategy>()
        .map_err(|_| ApiError::not_found("strategy", s))
}

macro_rules! try_api {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return ApiError::from(e).into_response(),
        }
    };
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/registry", get(registry))
        .route("/corpora", get(list_corpora))
        .route("/corpora/{cid}", put(put_corpus))
        .route("/sessions", post(create_session))
        .route("/sessions/{sid}", get(session))
        .route("/sessions/{sid}/test", get(test_set))
        .route("/sessions/{sid}/ground_truth", put(ground_truth))
        .route("/sessions/{sid}/ground_truth/finalize", post(finalize))
        .route("/sessions/{sid}/conditions/{strategy}/start", post(start))
        .route("/sessions/{sid}/conditions/{strategy}/end", post(end))
        .route("/sessions/{sid}/label", get(labels))
        .route("/sessions/{sid}/label/load_more", post(load_more))
        .route("/sessions/{sid}/label/labels", post(submit_labels))
        .route("/sessions/{sid}/rules", get(rules).post(create_rule))
        .route("/sessions/{sid}/rules/suggest", post(suggest))
        .route("/sessions/{sid}/rules/{rid}", put(update_rule).delete(delete_rule))
        .route("/sessions/{sid}/rules/{rid}/variants", put(variants))
        .route("/sessions/{sid}/prompts", get(prompts).post(create_prompt))
        .route("/sessions/{sid}/prompts/{pid}", put(update_prompt).delete(delete_prompt))
        .route("/sessions/{sid}/prompts/{pid}/examples", post(add_example))
        .route("/sessions/{sid}/prompts/{pid}/improve", post(improve))
        .route("/sessions/{sid}/apply", post(apply))
        .route("/sessions/{sid}/jobs/{jid}", get(job))
        .route("/sessions/{sid}/snapshots", get(snapshots))
        .route("/sessions/{sid}/events", get(events).post(post_event))
        .route("/sessions/{sid}/score/{strategy}", get(score))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route").into_response() })
        .with_state(app)
}

async fn health(State(app): State<Shared>) -> Response {
    Json(app.health()).into_response()
}

async fn registry(State(app): State<Shared>) -> Response {
    Json(json!({ "kinds": app.registry() })).into_response()
}

async fn list_corpora(State(app): State<Shared>) -> Response {
    Json(app.list_corpora()).into_response()
}

#[derive(Deserialize)]
struct CorpusBody {
    comments: Vec<Comment>,
}

async fn put_corpus(State(app): State<Shared>, Path(cid): Path<String>, b: Result<Json<CorpusBody>, JsonRejection>) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.put_corpus(&cid, b.comments)).await
}

async fn create_session(State(app): State<Shared>, b: Result<Json<CreateSessionRequest>, JsonRejection>) -> Response {
    let b = try_api!(body(b));
    match tokio::task::spawn_blocking(move || app.create_session(b)).await {
        Ok(Ok(v)) => (StatusCode::CREATED, Json(v)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

async fn session(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.session(&sid)).await
}

async fn test_set(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.test_set(&sid)).await
}

#[derive(Deserialize)]
struct GroundTruthBody {
    labels: BTreeMap<String, Decision>,
}

async fn ground_truth(
    State(app): State<Shared>,
    Path(sid): Path<String>,
    b: Result<Json<GroundTruthBody>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.submit_ground_truth(&sid, b.labels)).await
}

async fn finalize(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.finalize_ground_truth(&sid)).await
}

async fn start(State(app): State<Shared>, Path((sid, s)): Path<(String, String)>) -> Response {
    let s = try_api!(strategy(&s));
    run(app, move |a| a.start_condition(&sid, s)).await
}

async fn end(State(app): State<Shared>, Path((sid, s)): Path<(String, String)>) -> Response {
    let s = try_api!(strategy(&s));
    run(app, move |a| a.end_condition(&sid, s)).await
}

async fn labels(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.labels(&sid)).await
}

#[derive(Deserialize, Default)]
struct LoadMoreBody {
    #[serde(default)]
    k: Option<usize>,
}

async fn load_more(
    State(app): State<Shared>,
    Path(sid): Path<String>,
    b: Option<Json<LoadMoreBody>>,
) -> Response {
    let k = b.map(|Json(b)| b.k).unwrap_or_default();
    run(app, move |a| a.load_more(&sid, k).map(|items| json!({ "batch": items }))).await
}

#[derive(Deserialize)]
struct LabelsBody {
    labels: Vec<LabeledExample>,
}

async fn submit_labels(
    State(app): State<Shared>,
    Path(sid): Path<String>,
    b: Result<Json<LabelsBody>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.submit_labels(&sid, b.labels)).await
}

async fn rules(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.rules(&sid)).await
}

#[derive(Deserialize)]
struct RuleBody {
    rule: Rule,
}

async fn create_rule(State(app): State<Shared>, Path(sid): Path<String>, b: Result<Json<RuleBody>, JsonRejection>) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.create_rule(&sid, b.rule)).await
}

async fn update_rule(
    State(app): State<Shared>,
    Path((sid, rid)): Path<(String, String)>,
    b: Result<Json<RuleBody>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.update_rule(&sid, &rid, b.rule)).await
}

async fn delete_rule(State(app): State<Shared>, Path((sid, rid)): Path<(String, String)>) -> Response {
    run(app, move |a| a.delete_rule(&sid, &rid)).await
}

#[derive(Deserialize)]
struct VariantsBody {
    on: bool,
}

async fn variants(
    State(app): State<Shared>,
    Path((sid, rid)): Path<(String, String)>,
    b: Result<Json<VariantsBody>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.set_variants(&sid, &rid, b.on)).await
}

#[derive(Deserialize)]
struct SuggestBody {
    phrases: Vec<String>,
    #[serde(default)]
    rule_id: Option<String>,
}

async fn suggest(State(app): State<Shared>, Path(sid): Path<String>, b: Result<Json<SuggestBody>, JsonRejection>) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.suggest(&sid, b.phrases, b.rule_id)).await
}

async fn prompts(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.prompts(&sid)).await
}

async fn create_prompt(
    State(app): State<Shared>,
    Path(sid): Path<String>,
    b: Result<Json<PromptInput>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.create_prompt(&sid, b)).await
}

async fn update_prompt(
    State(app): State<Shared>,
    Path((sid, pid)): Path<(String, String)>,
    b: Result<Json<PromptInput>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.update_prompt(&sid, &pid, b)).await
}

async fn delete_prompt(State(app): State<Shared>, Path((sid, pid)): Path<(String, String)>) -> Response {
    run(app, move |a| a.delete_prompt(&sid, &pid)).await
}

#[derive(Deserialize)]
struct ExampleBody {
    text: String,
    should_remove: bool,
}

async fn add_example(
    State(app): State<Shared>,
    Path((sid, pid)): Path<(String, String)>,
    b: Result<Json<ExampleBody>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.add_example(&sid, &pid, b.text, b.should_remove)).await
}

#[derive(Deserialize, Default)]
struct ImproveBody {
    #[serde(default)]
    description: Option<String>,
}

async fn improve(
    State(app): State<Shared>,
    Path((sid, pid)): Path<(String, String)>,
    b: Option<Json<ImproveBody>>,
) -> Response {
    let d = b.and_then(|Json(b)| b.description);
    run(app, move |a| a.improve(&sid, &pid, d)).await
}

#[derive(Deserialize, Default)]
struct ApplyQuery {
    #[serde(default, rename = "async")]
    background: bool,
}

async fn apply(
    State(app): State<Shared>,
    Path(sid): Path<String>,
    Query(q): Query<ApplyQuery>,
    b: Result<Json<ApplyRequest>, JsonRejection>,
) -> Response {
    let b = try_api!(body(b));
    if q.background {
        return match app.start_apply_job(&sid, b) {
            Ok(job_id) => (StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response(),
            Err(e) => e.into_response(),
        };
    }
    run(app, move |a| a.apply(&sid, b)).await
}

async fn job(State(app): State<Shared>, Path((sid, jid)): Path<(String, String)>) -> Response {
    run(app, move |a| a.job(&sid, &jid)).await
}

async fn snapshots(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.snapshots(&sid)).await
}

async fn events(State(app): State<Shared>, Path(sid): Path<String>) -> Response {
    run(app, move |a| a.events(&sid)).await
}

#[derive(Deserialize)]
struct EventBody {
    kind: String,
    #[serde(default)]
    strategy: Option<Strategy>,
    #[serde(default)]
    payload: Value,
}

async fn post_event(State(app): State<Shared>, Path(sid): Path<String>, b: Result<Json<EventBody>, JsonRejection>) -> Response {
    let b = try_api!(body(b));
    run(app, move |a| a.post_event(&sid, &b.kind, b.strategy, b.payload)).await
}

async fn score(State(app): State<Shared>, Path((sid, s)): Path<(String, String)>) -> Response {
    let s = try_api!(strategy(&s));
    run(app, move |a| a.score(&sid, s)).await
}

/// Binds `config.listen` and serves until the process ends.
pub async fn serve(app: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&app.config().listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
