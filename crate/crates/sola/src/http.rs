//! REST interface over [`Service`].
//!
//! Every community-scoped route is mounted twice: under
//! `/communities/{cid}/...` and at the top level, where the community comes
//! from the event or ticket in the path or from a `community` query
//! parameter. Responses are canonical JSON (sorted keys, no whitespace);
//! errors are `{"error": code, "message": ..}` plus `conflicts` or
//! `violations` where relevant.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put, MethodRouter};
use axum::Router;
use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sola_core::access::{BoundaryPolicy, Role};
use sola_core::analytics::{stats_csv, StatsOptions};
use sola_core::canonical::to_canonical_vec;
use sola_core::model::{CommunityId, CommunitySettings, EventId, PersonId, ProgramId, TicketId, VenueId};
use sola_core::participation::{BadgeSpec, RsvpState};
use sola_core::portability::{ExportScope, ForkOptions};
use sola_core::scheduling::{ScheduleFilter, ViewMode};
use sola_core::service::{
    EventDraft, JoinBody, JoinOutcome, NewCommunity, ProgramDraft, RescheduleBody, Service, ServiceError, TicketDraft,
    VenueDraft,
};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const BUNDLE_CONTENT_TYPE: &str = "application/vnd.sola.bundle";
const MAX_BUNDLE_BYTES: usize = 64 * 1024 * 1024;

type Svc = Arc<Service>;

/// Canonical JSON body with a status code.
pub struct Canon<T>(pub StatusCode, pub T);

impl<T: Serialize> IntoResponse for Canon<T> {
    fn into_response(self) -> Response {
        match to_canonical_vec(&self.1) {
            Ok(bytes) => (self.0, [(CONTENT_TYPE, "application/json")], bytes).into_response(),
            Err(e) => ApiError::internal(e.to_string()).into_response(),
        }
    }
}

fn ok<T>(value: T) -> Canon<T> {
    Canon(StatusCode::OK, value)
}

fn created<T>(value: T) -> Canon<T> {
    Canon(StatusCode::CREATED, value)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": code, "message": message.into() }) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        let mut err = Self::new(status, e.code(), e.to_string());
        match &e {
            ServiceError::Conflict(c) => err.body["conflicts"] = json!(c),
            ServiceError::Invalid(r) => err.body["violations"] = json!(r.violations),
            ServiceError::StaleRevision { current, .. } => err.body["current_revision"] = json!(current),
            _ => {}
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let bytes = to_canonical_vec(&self.body).unwrap_or_default();
        (self.status, [(CONTENT_TYPE, "application/json")], bytes).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a service call off the async workers; writes may fsync.
async fn call<T: Send + 'static>(
    svc: &Svc,
    f: impl FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

/// JSON request body with errors rendered like every other error.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Body(v)),
            Err(r) => Err(ApiError::new(r.status(), "bad_request", r.body_text())),
        }
    }
}

/// Optional JSON body: an empty body means `T::default()`.
fn optional_json<T: DeserializeOwned + Default>(bytes: &Bytes) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_request", e.to_string()))
}

fn bearer(parts: &Parts) -> Option<&str> {
    let value = parts.headers.get(AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").map(str::trim)
}

/// An authenticated caller.
pub struct Authed(pub PersonId);

impl FromRequestParts<Svc> for Authed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Svc) -> Result<Self, Self::Rejection> {
        let token = bearer(parts).ok_or(ServiceError::Unauthenticated)?;
        Ok(Authed(svc.authenticate(token)?))
    }
}

/// A caller who may be anonymous. A token that is present but invalid is
/// still rejected.
pub struct Viewer(pub Option<PersonId>);

impl FromRequestParts<Svc> for Viewer {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Svc) -> Result<Self, Self::Rejection> {
        match bearer(parts) {
            Some(token) => Ok(Viewer(Some(svc.authenticate(token)?))),
            None => Ok(Viewer(None)),
        }
    }
}

/// The community a request addresses, with the remaining path parameters.
pub struct Scope {
    pub cid: CommunityId,
    params: HashMap<String, String>,
}

impl Scope {
    fn param<T: From<String>>(&self, name: &str) -> ApiResult<T> {
        self.params.get(name).cloned().map(T::from).ok_or_else(|| ApiError::bad_request(format!("missing {name}")))
    }

    fn event(&self) -> ApiResult<EventId> {
        self.param("eid")
    }
}

impl FromRequestParts<Svc> for Scope {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Svc) -> Result<Self, Self::Rejection> {
        let params = Path::<HashMap<String, String>>::from_request_parts(parts, svc).await.map(|p| p.0).unwrap_or_default();
        let query = Query::<HashMap<String, String>>::try_from_uri(&parts.uri).map(|q| q.0).unwrap_or_default();
        let cid = if let Some(c) = params.get("cid") {
            CommunityId::from(c.clone())
        } else if let Some(e) = params.get("eid") {
            svc.community_of_event(&EventId::from(e.clone())).ok_or(ServiceError::NotFound("event"))?
        } else if let Some(t) = params.get("tid") {
            svc.community_of_ticket(&TicketId::from(t.clone())).ok_or(ServiceError::NotFound("ticket"))?
        } else if let Some(c) = query.get("community") {
            CommunityId::from(c.clone())
        } else {
            return Err(ApiError::bad_request("community is required"));
        };
        Ok(Scope { cid, params })
    }
}

fn split_list<T: From<String> + Ord>(value: Option<&String>) -> BTreeSet<T> {
    value
        .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| T::from(s.to_string())).collect())
        .unwrap_or_default()
}

#[derive(Debug, Default, Deserialize)]
struct FilterQuery {
    mode: Option<ViewMode>,
    tags: Option<String>,
    venue: Option<String>,
    program: Option<String>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
    at: Option<DateTime<Utc>>,
}

impl FilterQuery {
    fn filter(&self) -> ScheduleFilter {
        ScheduleFilter {
            tags: split_list::<String>(self.tags.as_ref()),
            venues: split_list::<VenueId>(self.venue.as_ref()),
            programs: split_list::<ProgramId>(self.program.as_ref()),
            from: self.from,
            to: self.to,
        }
    }
}

fn query<T: DeserializeOwned>(parts: Result<Query<T>, axum::extract::rejection::QueryRejection>) -> ApiResult<T> {
    parts.map(|q| q.0).map_err(|e| ApiError::bad_request(e.body_text()))
}

// --- identity ---

#[derive(Deserialize)]
struct PersonBody {
    display_name: String,
}

async fn create_person(State(svc): State<Svc>, Body(b): Body<PersonBody>) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.create_person(&b.display_name)).await?))
}

#[derive(Deserialize)]
struct ClaimBody {
    claim_token: String,
}

async fn create_session(State(svc): State<Svc>, Body(b): Body<ClaimBody>) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.claim_session(&b.claim_token)).await?))
}

async fn me(State(svc): State<Svc>, Authed(me): Authed) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, move |s| s.person(&me)).await?))
}

// --- communities ---

async fn list_communities(State(svc): State<Svc>) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, |s| Ok(s.list_communities())).await?))
}

async fn create_community(
    State(svc): State<Svc>,
    Authed(me): Authed,
    Body(b): Body<NewCommunity>,
) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.create_community(&me, b)).await?))
}

async fn get_community(State(svc): State<Svc>, scope: Scope) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, move |s| s.community(&scope.cid)).await?))
}

#[derive(Deserialize)]
struct SettingsBody {
    #[serde(default)]
    settings: Option<CommunitySettings>,
    #[serde(default)]
    boundary_policy: Option<BoundaryPolicy>,
}

async fn update_settings(
    State(svc): State<Svc>,
    Authed(me): Authed,
    scope: Scope,
    Body(b): Body<SettingsBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, move |s| s.update_settings(&me, &scope.cid, b.settings, b.boundary_policy)).await?))
}

async fn my_membership(State(svc): State<Svc>, Authed(me): Authed, scope: Scope) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, move |s| s.membership(&scope.cid, &me)).await?))
}

fn join_status(outcome: &JoinOutcome) -> StatusCode {
    match outcome {
        JoinOutcome::Joined { .. } => StatusCode::CREATED,
        JoinOutcome::Pending { .. } => StatusCode::ACCEPTED,
    }
}

async fn join(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: JoinBody = optional_json(&body)?;
    let outcome = call(&svc, move |s| s.join(&me, &scope.cid, b)).await?;
    Ok(Canon(join_status(&outcome), outcome))
}

async fn approve_join(State(svc): State<Svc>, Authed(me): Authed, scope: Scope) -> ApiResult<impl IntoResponse> {
    let applicant: PersonId = scope.param("pid")?;
    let outcome = call(&svc, move |s| s.approve_join(&me, &scope.cid, &applicant)).await?;
    Ok(Canon(join_status(&outcome), outcome))
}

#[derive(Default, Deserialize)]
struct InvitationBody {
    #[serde(default)]
    max_uses: Option<u32>,
    #[serde(default)]
    expires_at: Option<DateTime<Utc>>,
}

async fn issue_invitation(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: InvitationBody = optional_json(&body)?;
    let (invitation, token) = call(&svc, move |s| s.issue_invitation(&me, &scope.cid, b.max_uses, b.expires_at)).await?;
    Ok(created(json!({ "invitation": invitation, "token": token })))
}

#[derive(Deserialize)]
struct RoleBody {
    role: Role,
}

async fn set_role(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<RoleBody>) -> ApiResult<impl IntoResponse> {
    let person: PersonId = scope.param("pid")?;
    Ok(ok(call(&svc, move |s| s.set_role(&me, &scope.cid, &person, b.role)).await?))
}

async fn list_programs(State(svc): State<Svc>, scope: Scope) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, move |s| s.programs(&scope.cid)).await?))
}

async fn create_program(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<ProgramDraft>) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.create_program(&me, &scope.cid, b)).await?))
}

async fn list_venues(State(svc): State<Svc>, scope: Scope) -> ApiResult<impl IntoResponse> {
    Ok(ok(call(&svc, move |s| s.venues(&scope.cid)).await?))
}

async fn create_venue(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<VenueDraft>) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.create_venue(&me, &scope.cid, b)).await?))
}

async fn update_venue(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<VenueDraft>) -> ApiResult<impl IntoResponse> {
    let venue: VenueId = scope.param("vid")?;
    Ok(ok(call(&svc, move |s| s.update_venue(&me, &scope.cid, &venue, b)).await?))
}

// --- events ---

async fn create_event(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<EventDraft>) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.create_event(&me, &scope.cid, b)).await?))
}

async fn get_event(State(svc): State<Svc>, Viewer(v): Viewer, scope: Scope) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(ok(call(&svc, move |s| s.event(v.as_ref(), &scope.cid, &id)).await?))
}

async fn reschedule(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<RescheduleBody>) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(ok(call(&svc, move |s| s.reschedule_event(&me, &scope.cid, &id, b)).await?))
}

#[derive(Default, Deserialize)]
struct RevisionBody {
    #[serde(default)]
    expected_revision: Option<u64>,
}

async fn publish(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, body: Bytes) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    let b: RevisionBody = optional_json(&body)?;
    Ok(ok(call(&svc, move |s| s.publish_event(&me, &scope.cid, &id, b.expected_revision)).await?))
}

async fn cancel(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, body: Bytes) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    let b: RevisionBody = optional_json(&body)?;
    Ok(ok(call(&svc, move |s| s.cancel_event(&me, &scope.cid, &id, b.expected_revision)).await?))
}

#[derive(Deserialize)]
struct RsvpBody {
    state: RsvpState,
}

async fn rsvp(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<RsvpBody>) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(ok(call(&svc, move |s| s.set_rsvp(&me, &scope.cid, &id, b.state)).await?))
}

async fn checkin_token(State(svc): State<Svc>, Authed(me): Authed, scope: Scope) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    let token = call(&svc, move |s| s.issue_checkin_token(&me, &scope.cid, &id)).await?;
    Ok(created(json!({ "token": token })))
}

#[derive(Deserialize)]
struct CheckinBody {
    token: String,
}

async fn checkin(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<CheckinBody>) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(ok(call(&svc, move |s| s.checkin(&me, &scope.cid, &id, &b.token)).await?))
}

#[derive(Deserialize)]
struct RevokeBody {
    person_id: PersonId,
}

async fn revoke(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<RevokeBody>) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(ok(call(&svc, move |s| s.revoke_checkin(&me, &scope.cid, &id, &b.person_id)).await?))
}

async fn presence(State(svc): State<Svc>, Viewer(v): Viewer, scope: Scope) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(ok(call(&svc, move |s| s.presence(v.as_ref(), &scope.cid, &id)).await?))
}

async fn create_ticket(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<TicketDraft>) -> ApiResult<impl IntoResponse> {
    let id = scope.event()?;
    Ok(created(call(&svc, move |s| s.create_ticket(&me, &scope.cid, &id, b)).await?))
}

async fn claim_ticket(State(svc): State<Svc>, Authed(me): Authed, scope: Scope) -> ApiResult<impl IntoResponse> {
    let ticket: TicketId = scope.param("tid")?;
    Ok(ok(call(&svc, move |s| s.claim_ticket(&me, &scope.cid, &ticket)).await?))
}

async fn grant_badge(State(svc): State<Svc>, Authed(me): Authed, scope: Scope, Body(b): Body<BadgeSpec>) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.grant_badge(&me, &scope.cid, b)).await?))
}

// --- projections ---

async fn schedule(
    State(svc): State<Svc>,
    Viewer(v): Viewer,
    scope: Scope,
    q: Result<Query<FilterQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    let mode = q.mode.unwrap_or(ViewMode::List);
    let filter = q.filter();
    Ok(ok(call(&svc, move |s| s.schedule(v.as_ref(), &scope.cid, &filter, mode)).await?))
}

async fn map(
    State(svc): State<Svc>,
    Viewer(v): Viewer,
    scope: Scope,
    q: Result<Query<FilterQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    let filter = q.filter();
    let at = q.at;
    Ok(ok(call(&svc, move |s| s.map(v.as_ref(), &scope.cid, &filter, at.unwrap_or_else(|| s.now()))).await?))
}

#[derive(Deserialize)]
struct FeedQuery {
    #[serde(default)]
    since: u64,
}

async fn feed(
    State(svc): State<Svc>,
    scope: Scope,
    q: Result<Query<FeedQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let since = query(q)?.since;
    Ok(ok(call(&svc, move |s| s.feed(&scope.cid, since)).await?))
}

#[derive(Deserialize)]
struct StatsQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    #[serde(default)]
    include_co_hosts: bool,
    #[serde(default)]
    format: Option<String>,
}

async fn stats(
    State(svc): State<Svc>,
    Authed(me): Authed,
    scope: Scope,
    q: Result<Query<StatsQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let options = StatsOptions { include_co_hosts: q.include_co_hosts };
    let cid = scope.cid.clone();
    let (stats, name) = call(&svc, move |s| {
        let stats = s.stats(&me, &cid, q.from, q.to, options)?;
        Ok((stats, s.community(&cid)?.name))
    })
    .await?;
    match q.format.as_deref() {
        None | Some("json") => Ok(ok(stats).into_response()),
        Some("csv") => Ok(([(CONTENT_TYPE, "text/csv")], stats_csv([(name.as_str(), &stats)])).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other}"))),
    }
}

#[derive(Deserialize)]
struct LimitQuery {
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    10
}

async fn bridge_prompts(
    State(svc): State<Svc>,
    Viewer(v): Viewer,
    scope: Scope,
    q: Result<Query<LimitQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let limit = query(q)?.limit;
    Ok(ok(call(&svc, move |s| s.bridge_prompts(v.as_ref(), &scope.cid, limit)).await?))
}

async fn ical(State(svc): State<Svc>, Viewer(v): Viewer, Path(file): Path<String>) -> ApiResult<Response> {
    let cid = CommunityId::from(file.strip_suffix(".ics").unwrap_or(&file).to_string());
    let text = call(&svc, move |s| s.ical(v.as_ref(), &cid)).await?;
    Ok(([(CONTENT_TYPE, "text/calendar; charset=utf-8")], text).into_response())
}

// --- portability ---

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default = "full_scope")]
    scope: ExportScope,
}

fn full_scope() -> ExportScope {
    ExportScope::Full
}

async fn export(
    State(svc): State<Svc>,
    Authed(me): Authed,
    scope: Scope,
    q: Result<Query<ExportQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let export_scope = query(q)?.scope;
    let bundle = call(&svc, move |s| s.export(&me, &scope.cid, export_scope)).await?;
    Ok(([(CONTENT_TYPE, BUNDLE_CONTENT_TYPE)], bundle.to_file_bytes()).into_response())
}

async fn import(State(svc): State<Svc>, Authed(me): Authed, body: Bytes) -> ApiResult<impl IntoResponse> {
    Ok(created(call(&svc, move |s| s.import(Some(&me), &body)).await?))
}

#[derive(Deserialize)]
struct ForkQuery {
    name: String,
    #[serde(default)]
    inherit_roles: bool,
    #[serde(default)]
    carry_archive: bool,
}

async fn fork(
    State(svc): State<Svc>,
    Authed(me): Authed,
    q: Result<Query<ForkQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    let options = ForkOptions { inherit_roles: q.inherit_roles, carry_archive: q.carry_archive };
    Ok(created(call(&svc, move |s| s.fork(Some(&me), &body, &q.name, options)).await?))
}

async fn health() -> impl IntoResponse {
    ok(json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// Registers `path` both at the top level and under `/communities/{cid}`.
fn scoped(router: Router<Svc>, path: &str, method: MethodRouter<Svc>) -> Router<Svc> {
    router.route(path, method.clone()).route(&format!("/communities/{{cid}}{path}"), method)
}

fn cors(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST, Method::PUT, Method::PATCH, Method::DELETE])
            .allow_headers([AUTHORIZATION, CONTENT_TYPE]),
    )
}

/// The full application router.
pub fn router(svc: Svc, cors_origins: &[String]) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/persons", post(create_person))
        .route("/sessions", post(create_session))
        .route("/me", get(me))
        .route("/communities", get(list_communities).post(create_community))
        .route("/communities/{cid}", get(get_community))
        .route("/ical/{file}", get(ical))
        .route("/import", post(import).layer(DefaultBodyLimit::max(MAX_BUNDLE_BYTES)))
        .route("/fork", post(fork).layer(DefaultBodyLimit::max(MAX_BUNDLE_BYTES)));
    let routes: Vec<(&str, MethodRouter<Svc>)> = vec![
        ("/settings", patch(update_settings)),
        ("/membership", get(my_membership)),
        ("/join", post(join)),
        ("/join-requests/{pid}/approve", post(approve_join)),
        ("/invitations", post(issue_invitation)),
        ("/members/{pid}/role", put(set_role)),
        ("/programs", get(list_programs).post(create_program)),
        ("/venues", get(list_venues).post(create_venue)),
        ("/venues/{vid}", put(update_venue)),
        ("/events", post(create_event)),
        ("/events/{eid}", get(get_event).patch(reschedule)),
        ("/events/{eid}/publish", post(publish)),
        ("/events/{eid}/cancel", post(cancel)),
        ("/events/{eid}/rsvp", post(rsvp)),
        ("/events/{eid}/checkin-token", post(checkin_token)),
        ("/events/{eid}/checkin", post(checkin)),
        ("/events/{eid}/checkin/revoke", post(revoke)),
        ("/events/{eid}/presence", get(presence)),
        ("/events/{eid}/tickets", post(create_ticket)),
        ("/tickets/{tid}/claim", post(claim_ticket)),
        ("/badges", post(grant_badge)),
        ("/schedule", get(schedule)),
        ("/map", get(map)),
        ("/feed", get(feed)),
        ("/stats", get(stats)),
        ("/bridge-prompts", get(bridge_prompts)),
        ("/export", post(export)),
    ];
    for (path, method) in routes {
        r = scoped(r, path, method);
    }
    let r = r.fallback(not_found).with_state(svc);
    match cors(cors_origins) {
        Some(layer) => r.layer(layer),
        None => r,
    }
}
