//! HTTP routes.
//!
//! Voters are identified by a browser-token cookie. Creator actions need the
//! survey's creator token as `Authorization: Bearer <token>`.

use axum::extract::{Path, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE, COOKIE, SET_COOKIE};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use wikisurvey_core::estimator::ModelConfig;
use wikisurvey_core::report::ResultsDocument;
use wikisurvey_core::{
    AppearanceId, Choice, IdeaSubmission, ItemId, ItemState, PromptPolicyConfig, SessionPolicyConfig,
    SimpleScore, SubmissionId, SubmissionState, SurveyConfig, SurveyId,
};

use crate::error::ApiError;
use crate::jobs::{EstimationJob, JobId};
use crate::Service;

type ApiResult<T> = Result<T, ApiError>;

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/surveys", post(create_survey))
        .route("/surveys/{survey}", get(get_survey))
        .route("/surveys/{survey}/prompt", get(get_prompt))
        .route("/appearances/{appearance}/response", post(post_response))
        .route("/surveys/{survey}/ideas", post(submit_idea).get(list_ideas))
        .route("/ideas/{submission}/activate", post(activate_idea))
        .route("/ideas/{submission}/reject", post(reject_idea))
        .route("/surveys/{survey}/items/{item}/deactivate", post(deactivate_item))
        .route("/surveys/{survey}/results", get(get_results))
        .route("/surveys/{survey}/export.csv", get(export_csv))
        .route("/surveys/{survey}/estimate", post(estimate))
        .route("/jobs/{job}", get(get_job))
        .with_state(service)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn cookie_token(headers: &HeaderMap, name: &str) -> Option<String> {
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(k, v)| *k == name && !v.is_empty())
        .map(|(_, v)| v.to_owned())
}

/// The caller's browser token, plus a `Set-Cookie` value when a new one had
/// to be minted.
fn voter_token(service: &Service, headers: &HeaderMap) -> (String, Option<HeaderValue>) {
    let section = &service.config().session;
    if let Some(t) = cookie_token(headers, &section.cookie_name) {
        return (t, None);
    }
    let token = uuid::Uuid::new_v4().simple().to_string();
    let max_age = u64::from(section.cookie_max_age_days) * 86_400;
    let cookie = format!("{}={token}; Path=/; Max-Age={max_age}; HttpOnly; SameSite=Lax", section.cookie_name);
    (token, Some(HeaderValue::from_str(&cookie).expect("cookie is ASCII")))
}

fn with_cookie(cookie: Option<HeaderValue>, response: impl IntoResponse) -> Response {
    let mut response = response.into_response();
    if let Some(c) = cookie {
        response.headers_mut().append(SET_COOKIE, c);
    }
    response
}

fn require_creator(service: &Service, headers: &HeaderMap, survey: SurveyId) -> ApiResult<()> {
    let token = headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::unauthorized("creator token required"))?;
    let state = service.lock();
    state.store().survey(survey)?;
    if !state.is_creator(survey, token.trim()) {
        return Err(ApiError::unauthorized("creator token does not match this survey"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: ItemId,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSurvey {
    question: String,
    #[serde(default)]
    seed_items: Vec<String>,
    #[serde(default)]
    prompt: Option<PromptPolicyConfig>,
    #[serde(default)]
    session_timeout_minutes: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SurveyCreated {
    survey_id: SurveyId,
    creator_token: String,
    items: Vec<ItemView>,
}

async fn create_survey(State(service): State<Service>, Json(body): Json<CreateSurvey>) -> ApiResult<Response> {
    let defaults = service.config();
    let session = match body.session_timeout_minutes {
        Some(m) if !(m.is_finite() && m > 0.0) => {
            return Err(ApiError::bad_request("session_timeout_minutes must be positive"))
        }
        Some(m) => SessionPolicyConfig { inactivity_timeout_secs: (m * 60.0).round() as i64 },
        None => defaults.session.policy(),
    };
    let config = SurveyConfig { prompt: body.prompt.unwrap_or(defaults.prompt), session };
    let creator_token = uuid::Uuid::new_v4().simple().to_string();
    let now = service.now();
    let mut state = service.lock();
    let survey_id =
        state.create_survey(body.question, body.seed_items, config, creator_token.clone(), now)?;
    let items = state
        .store()
        .items(survey_id)?
        .map(|i| ItemView { item_id: i.id, text: i.text.clone() })
        .collect();
    Ok((StatusCode::CREATED, Json(SurveyCreated { survey_id, creator_token, items })).into_response())
}

#[derive(Debug, Serialize)]
struct SurveyView {
    survey_id: SurveyId,
    question: String,
    created_at: chrono::DateTime<chrono::Utc>,
    prompt: PromptPolicyConfig,
    session_timeout_minutes: f64,
    /// Active items in id order; carries no popularity information.
    items: Vec<ItemView>,
}

async fn get_survey(State(service): State<Service>, Path(survey): Path<u64>) -> ApiResult<Json<SurveyView>> {
    let state = service.lock();
    let s = state.store().survey(SurveyId(survey))?;
    let items = state
        .store()
        .items(s.id)?
        .filter(|i| i.is_active())
        .map(|i| ItemView { item_id: i.id, text: i.text.clone() })
        .collect();
    Ok(Json(SurveyView {
        survey_id: s.id,
        question: s.question.clone(),
        created_at: s.created_at,
        prompt: s.config.prompt,
        session_timeout_minutes: s.config.session.inactivity_timeout_secs as f64 / 60.0,
        items,
    }))
}

/// What a voter sees: two ideas and nothing about how either is doing.
#[derive(Debug, Serialize, Deserialize)]
pub struct PromptView {
    pub appearance_id: AppearanceId,
    pub survey_id: SurveyId,
    pub left: ItemView,
    pub right: ItemView,
}

async fn get_prompt(
    State(service): State<Service>,
    Path(survey): Path<u64>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let (token, cookie) = voter_token(&service, &headers);
    let now = service.now();
    let mut state = service.lock();
    let a = state.serve_prompt(SurveyId(survey), &token, now)?;
    let view = |id: ItemId| -> ApiResult<ItemView> {
        Ok(ItemView { item_id: id, text: state.store().item(a.survey_id, id)?.text.clone() })
    };
    let body = PromptView { appearance_id: a.id, survey_id: a.survey_id, left: view(a.prompt.left)?, right: view(a.prompt.right)? };
    Ok(with_cookie(cookie, Json(body)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseBody {
    choice: Choice,
}

/// Acknowledges receipt; voters never learn whether a response counted.
#[derive(Debug, Serialize)]
struct ResponseAck {
    appearance_id: AppearanceId,
    received: bool,
}

async fn post_response(
    State(service): State<Service>,
    Path(appearance): Path<u64>,
    headers: HeaderMap,
    Json(body): Json<ResponseBody>,
) -> ApiResult<Response> {
    let cookie_name = &service.config().session.cookie_name;
    let token = cookie_token(&headers, cookie_name)
        .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, "session cookie required"))?;
    let id = AppearanceId(appearance);
    let now = service.now();
    let mut state = service.lock();
    let app = state.store().appearance(id)?;
    if state.store().session(app.session_id)?.token != token {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "appearance belongs to another browser"));
    }
    let r = state.record_response(id, body.choice, now)?;
    if r.duplicate {
        return Err(ApiError::conflict(format!("appearance {id} already has a response")));
    }
    Ok(Json(ResponseAck { appearance_id: id, received: true }).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdeaBody {
    text: String,
}

#[derive(Debug, Serialize)]
struct IdeaView {
    submission_id: SubmissionId,
    survey_id: SurveyId,
    item_id: ItemId,
    text: String,
    state: SubmissionState,
    submitted_at: chrono::DateTime<chrono::Utc>,
}

impl From<IdeaSubmission> for IdeaView {
    fn from(s: IdeaSubmission) -> Self {
        Self {
            submission_id: s.id,
            survey_id: s.survey_id,
            item_id: s.item_id,
            text: s.text,
            state: s.state,
            submitted_at: s.submitted_at,
        }
    }
}

async fn submit_idea(
    State(service): State<Service>,
    Path(survey): Path<u64>,
    headers: HeaderMap,
    Json(body): Json<IdeaBody>,
) -> ApiResult<Response> {
    let (token, cookie) = voter_token(&service, &headers);
    let now = service.now();
    let s = service.lock().submit_idea(SurveyId(survey), &token, body.text, now)?;
    Ok(with_cookie(cookie, (StatusCode::CREATED, Json(IdeaView::from(s)))))
}

async fn list_ideas(
    State(service): State<Service>,
    Path(survey): Path<u64>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<IdeaView>>> {
    let survey = SurveyId(survey);
    require_creator(&service, &headers, survey)?;
    let state = service.lock();
    Ok(Json(state.store().submissions(survey)?.into_iter().cloned().map(IdeaView::from).collect()))
}

async fn moderate(service: Service, submission: u64, headers: HeaderMap, activate: bool) -> ApiResult<Json<IdeaView>> {
    let id = SubmissionId(submission);
    let survey = service.lock().store().submission(id)?.survey_id;
    require_creator(&service, &headers, survey)?;
    Ok(Json(service.lock().moderate_idea(id, activate)?.into()))
}

async fn activate_idea(
    State(service): State<Service>,
    Path(submission): Path<u64>,
    headers: HeaderMap,
) -> ApiResult<Json<IdeaView>> {
    moderate(service, submission, headers, true).await
}

async fn reject_idea(
    State(service): State<Service>,
    Path(submission): Path<u64>,
    headers: HeaderMap,
) -> ApiResult<Json<IdeaView>> {
    moderate(service, submission, headers, false).await
}

async fn deactivate_item(
    State(service): State<Service>,
    Path((survey, item)): Path<(u64, u64)>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    let survey = SurveyId(survey);
    require_creator(&service, &headers, survey)?;
    service.lock().set_item_state(survey, ItemId(item), ItemState::Inactive)?;
    Ok(Json(serde_json::json!({ "survey_id": survey, "item_id": item, "state": ItemState::Inactive })))
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    min_appearances: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ModeledView {
    job_id: JobId,
    finished_at: Option<chrono::DateTime<chrono::Utc>>,
    results: ResultsDocument,
}

#[derive(Debug, Serialize)]
struct ResultsView {
    survey_id: SurveyId,
    min_appearances: u64,
    simple: Vec<SimpleScore>,
    /// Latest converged estimation, if any.
    modeled: Option<ModeledView>,
}

async fn get_results(
    State(service): State<Service>,
    Path(survey): Path<u64>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult<Json<ResultsView>> {
    let survey = SurveyId(survey);
    let min_appearances = q.min_appearances.unwrap_or(service.config().results.min_appearances);
    let state = service.lock();
    let simple = state.store().rank_items(survey, min_appearances)?;
    let modeled = state.latest_converged_job(survey).and_then(|j| {
        j.results.as_ref().map(|r| ModeledView { job_id: j.job_id, finished_at: j.finished_at, results: (**r).clone() })
    });
    Ok(Json(ResultsView { survey_id: survey, min_appearances, simple, modeled }))
}

async fn export_csv(
    State(service): State<Service>,
    Path(survey): Path<u64>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let survey = SurveyId(survey);
    require_creator(&service, &headers, survey)?;
    let bytes = service.lock().store().export_votes_csv(survey)?;
    Ok(([(CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8"))], bytes).into_response())
}

/// Merges `overrides` onto the service's estimation defaults.
fn job_config(defaults: &ModelConfig, overrides: Option<serde_json::Value>) -> ApiResult<ModelConfig> {
    let Some(overrides) = overrides.filter(|v| !v.is_null()) else {
        return Ok(defaults.clone());
    };
    let serde_json::Value::Object(fields) = overrides else {
        return Err(ApiError::bad_request("estimation overrides must be a JSON object"));
    };
    let mut merged = serde_json::to_value(defaults).map_err(|e| ApiError::internal(e.to_string()))?;
    let target = merged.as_object_mut().expect("config serializes to an object");
    for (k, v) in fields {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| ApiError::bad_request(format!("invalid estimation config: {e}")))
}

async fn estimate(
    State(service): State<Service>,
    Path(survey): Path<u64>,
    headers: HeaderMap,
    body: Option<Json<serde_json::Value>>,
) -> ApiResult<Response> {
    let survey = SurveyId(survey);
    require_creator(&service, &headers, survey)?;
    let config = job_config(&service.config().estimation, body.map(|Json(v)| v))?;
    let job = service.enqueue(survey, config)?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(State(service): State<Service>, Path(job): Path<u64>) -> ApiResult<Json<EstimationJob>> {
    service
        .lock()
        .job(JobId(job))
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {job}")))
}
