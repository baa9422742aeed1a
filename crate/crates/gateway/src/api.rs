//! HTTP routes under `/api/v1`.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use provbase::kernel::{ActorId, ActorRef, Event, ItemId, Payload, Seq, VersionNumber};
use provbase::model::{
    owning_analysis, Analysis, AnalysisChanges, AnalysisRequest, DatasetSpec, PipelineSpec,
};
use provbase::orchestrator::{ElementStatus, Intervention, OutcomeRecord};
use provbase::prov::{export_prov, ProvFormat};
use provbase::query::{
    self, AnalysisFilter, Constraint, Direction, NodeKind, NodeRef, UsageTarget,
};
use provbase::Error as CoreError;

use crate::app::App;
use crate::error::{GatewayError, Result};

type AppState = State<Arc<App>>;

impl From<JsonRejection> for GatewayError {
    fn from(r: JsonRejection) -> Self {
        GatewayError::BadRequest(r.body_text())
    }
}

impl From<PathRejection> for GatewayError {
    fn from(r: PathRejection) -> Self {
        GatewayError::NotFound(r.body_text())
    }
}

impl From<QueryRejection> for GatewayError {
    fn from(r: QueryRejection) -> Self {
        GatewayError::BadRequest(r.body_text())
    }
}

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(GatewayError))]
struct Body<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(GatewayError))]
struct Path<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(GatewayError))]
struct Query<T>(T);

/// The authenticated actor of a request.
pub struct Caller(pub ActorRef);

impl FromRequestParts<Arc<App>> for Caller {
    type Rejection = GatewayError;

    async fn from_request_parts(parts: &mut Parts, app: &Arc<App>) -> Result<Self> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|h| h.to_str().ok())
            .and_then(|h| h.strip_prefix("Bearer "))
            .ok_or(GatewayError::Unauthorized)?;
        app.authenticate(token.trim())
            .cloned()
            .map(Caller)
            .ok_or(GatewayError::Unauthorized)
    }
}

/// Runs store work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| GatewayError::Core(CoreError::Io(std::io::Error::other(e.to_string()))))?
}

pub fn router(app: Arc<App>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/pipelines", post(register_pipeline))
        .route("/pipelines/{id}", get(show_pipeline))
        .route("/pipelines/{id}/versions/{v}", get(pipeline_version))
        .route("/datasets", post(register_dataset))
        .route("/datasets/{id}", get(show_dataset))
        .route("/datasets/{id}/query", post(query_dataset))
        .route("/analyses", post(create_analysis).get(list_analyses))
        .route("/analyses/{id}", get(show_analysis))
        .route("/analyses/{id}/run", post(run_analysis))
        .route("/analyses/{id}/clone", post(clone_analysis))
        .route("/analyses/{id}/share", post(share_analysis))
        .route("/analyses/{id}/annotations", post(annotate))
        .route("/analyses/{id}/interventions", post(intervene))
        .route("/analyses/{id}/jobs", get(jobs))
        .route("/analyses/{id}/prov", get(prov))
        .route("/lineage/{node}", get(lineage))
        .route("/usage/{target}", get(usage))
        .route("/events/stream", get(events));
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { GatewayError::NotFound("no such route".into()) })
        .with_state(app)
}

async fn health(State(app): AppState) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "items": app.kernel.item_count(),
        "last_seq": app.kernel.last_seq(),
    }))
}

#[derive(Debug, Default, Deserialize)]
struct ReasonQuery {
    reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRef {
    pub id: ItemId,
    pub name: String,
    pub version: VersionNumber,
}

async fn register_pipeline(
    State(app): AppState,
    Caller(actor): Caller,
    Query(q): Query<ReasonQuery>,
    Body(spec): Body<PipelineSpec>,
) -> Result<impl IntoResponse> {
    let reason = q.reason.unwrap_or_else(|| "register pipeline".into());
    let name = spec.name.clone();
    let (id, version) =
        blocking(move || Ok(app.registry.register_pipeline(&spec, &actor, &reason)?)).await?;
    Ok((StatusCode::CREATED, Json(PipelineRef { id, name, version })))
}

#[derive(Debug, Serialize)]
struct PipelineView {
    id: ItemId,
    version: VersionNumber,
    spec: PipelineSpec,
}

async fn show_pipeline(
    State(app): AppState,
    _: Caller,
    Path(id): Path<ItemId>,
) -> Result<Json<PipelineView>> {
    let (version, spec) = app.registry.pipeline(id, None)?;
    Ok(Json(PipelineView { id, version, spec }))
}

async fn pipeline_version(
    State(app): AppState,
    _: Caller,
    Path((id, v)): Path<(ItemId, u32)>,
) -> Result<Json<Value>> {
    Ok(Json(
        app.kernel.read(|s| query::get_workflow_version(s, id, v))?,
    ))
}

async fn register_dataset(
    State(app): AppState,
    Caller(actor): Caller,
    Query(q): Query<ReasonQuery>,
    Body(spec): Body<DatasetSpec>,
) -> Result<impl IntoResponse> {
    let reason = q.reason.unwrap_or_else(|| "register dataset".into());
    let ds = blocking(move || {
        let id = app.registry.register_dataset(&spec, &actor, &reason)?;
        Ok(app.registry.dataset(id)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(ds)))
}

async fn show_dataset(
    State(app): AppState,
    _: Caller,
    Path(id): Path<ItemId>,
) -> Result<impl IntoResponse> {
    Ok(Json(app.registry.dataset(id)?))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

async fn query_dataset(
    State(app): AppState,
    _: Caller,
    Path(id): Path<ItemId>,
    Body(req): Body<QueryRequest>,
) -> Result<impl IntoResponse> {
    let hits = blocking(move || {
        Ok(app
            .kernel
            .read(|s| query::find_data_elements(s, Some(id), &req.constraints))?)
    })
    .await?;
    Ok(Json(hits))
}

async fn create_analysis(
    State(app): AppState,
    Caller(actor): Caller,
    Body(req): Body<AnalysisRequest>,
) -> Result<impl IntoResponse> {
    let a = blocking(move || {
        let id = app.registry.create_analysis(&req, &actor)?;
        Ok(app.registry.analysis(id)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(a)))
}

async fn list_analyses(
    State(app): AppState,
    Caller(actor): Caller,
    Query(filter): Query<AnalysisFilter>,
) -> Result<impl IntoResponse> {
    Ok(Json(
        app.kernel
            .read(|s| query::list_analyses(s, &actor.id, &filter)),
    ))
}

/// An analysis together with its execution status.
#[derive(Debug, Serialize)]
pub struct AnalysisView {
    #[serde(flatten)]
    pub analysis: Analysis,
    pub active: bool,
    pub elements: Vec<ElementStatus>,
    pub records: usize,
    pub outcome: Option<OutcomeRecord>,
}

async fn show_analysis(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
) -> Result<Json<AnalysisView>> {
    let analysis = app.registry.analysis_for(id, &actor)?;
    let status = app.orchestrator.status(id)?;
    Ok(Json(AnalysisView {
        analysis,
        active: status.active,
        elements: status.elements,
        records: status.records,
        outcome: status.outcome,
    }))
}

async fn run_analysis(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
) -> Result<impl IntoResponse> {
    let state = blocking(move || {
        app.orchestrator.run_analysis(id, &actor)?;
        Ok(app.registry.analysis(id)?.state)
    })
    .await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "analysis": id, "state": state })),
    ))
}

async fn clone_analysis(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
    Body(changes): Body<AnalysisChanges>,
) -> Result<impl IntoResponse> {
    let a = blocking(move || {
        let c = app.registry.clone_analysis(id, &changes, &actor)?;
        Ok(app.registry.analysis(c)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(a)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShareRequest {
    pub grantee: String,
}

async fn share_analysis(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
    Body(req): Body<ShareRequest>,
) -> Result<impl IntoResponse> {
    let grantee = app.actor(&req.grantee)?;
    app.registry.share_analysis(id, &actor, &grantee)?;
    let a = app.registry.analysis(id)?;
    Ok(Json(
        json!({ "analysis": id, "shared_with": a.shared_with }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub text: String,
}

async fn annotate(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
    Body(req): Body<AnnotationRequest>,
) -> Result<impl IntoResponse> {
    app.registry.analysis_for(id, &actor)?;
    let seq = app.registry.annotate(id, &req.text, &actor)?;
    Ok((StatusCode::CREATED, Json(json!({ "item": id, "seq": seq }))))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InterventionRequest {
    #[serde(flatten)]
    pub modification: Intervention,
    #[serde(default)]
    pub reason: String,
}

async fn intervene(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
    Body(req): Body<InterventionRequest>,
) -> Result<impl IntoResponse> {
    let reason = if req.reason.trim().is_empty() {
        "intervention".to_owned()
    } else {
        req.reason
    };
    let ack = blocking(move || {
        Ok(app
            .orchestrator
            .intervene(id, &req.modification, &actor, &reason)?)
    })
    .await?;
    Ok(Json(ack))
}

async fn jobs(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
) -> Result<impl IntoResponse> {
    Ok(Json(
        app.kernel.read(|s| query::job_results(s, id, &actor.id))?,
    ))
}

#[derive(Debug, Default, Deserialize)]
struct ProvQuery {
    format: Option<String>,
}

async fn prov(
    State(app): AppState,
    Caller(actor): Caller,
    Path(id): Path<ItemId>,
    Query(q): Query<ProvQuery>,
) -> Result<Response> {
    let format: ProvFormat = q.format.as_deref().unwrap_or("prov-json").parse()?;
    let text = blocking(move || {
        Ok(export_prov(
            &app.kernel,
            id,
            format,
            &actor.id,
            &app.config.prov,
        )?)
    })
    .await?;
    let mime = match format {
        ProvFormat::ProvJson => "application/json",
        ProvFormat::ProvN => "text/provenance-notation; charset=utf-8",
    };
    Ok(([(CONTENT_TYPE, mime)], text).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct LineageQuery {
    direction: Option<Direction>,
    depth: Option<usize>,
}

/// Nodes tied to an analysis are visible only to its viewers.
fn check_node_visible(app: &App, node: &NodeRef, actor: &ActorRef) -> Result<()> {
    let analysis = match node.kind {
        NodeKind::Analysis | NodeKind::Outcome | NodeKind::JobRecord => node
            .id
            .parse::<ItemId>()
            .ok()
            .and_then(|id| app.kernel.read(|s| owning_analysis(s, id))),
        NodeKind::DataElement | NodeKind::PipelineVersion => None,
    };
    match analysis {
        Some(a) if !app.registry.can_view(a, actor)? => Err(CoreError::NotVisible(a).into()),
        _ => Ok(()),
    }
}

async fn lineage(
    State(app): AppState,
    Caller(actor): Caller,
    Path(node): Path<String>,
    Query(q): Query<LineageQuery>,
) -> Result<impl IntoResponse> {
    let root = app.kernel.read(|s| NodeRef::resolve(s, &node))?;
    check_node_visible(&app, &root, &actor)?;
    let direction = q.direction.unwrap_or(Direction::Origins);
    let graph = blocking(move || {
        Ok(app
            .kernel
            .read(|s| query::lineage(s, &root, direction, q.depth))?)
    })
    .await?;
    Ok(Json(graph))
}

async fn usage(
    State(app): AppState,
    Caller(actor): Caller,
    Path(target): Path<String>,
) -> Result<impl IntoResponse> {
    let target: UsageTarget = target.parse()?;
    Ok(Json(
        app.kernel.read(|s| query::usage(s, &target, &actor.id))?,
    ))
}

/// Payload of one `state` event on the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub seq: Seq,
    pub item: ItemId,
    pub analysis: ItemId,
    pub from: Option<String>,
    pub to: String,
    pub at: String,
}

fn state_event(app: &App, e: &Event, viewer: &ActorId) -> Option<StateEvent> {
    let Payload::StateTransition { from, to } = &e.payload else {
        return None;
    };
    let analysis = app.kernel.read(|s| owning_analysis(s, e.item))?;
    let visible = app
        .registry
        .analysis(analysis)
        .is_ok_and(|a| a.visible_to(viewer));
    visible.then(|| StateEvent {
        seq: e.seq,
        item: e.item,
        analysis,
        from: from.clone(),
        to: to.clone(),
        at: e.at.to_rfc3339(),
    })
}

#[derive(Debug, Default, Deserialize)]
struct StreamQuery {
    since: Option<Seq>,
}

/// State transitions visible to the caller. Each event carries its seq as
/// the SSE id; on reconnect, `Last-Event-ID` (or `?since=`) replays what was
/// missed, so delivery is at least once and clients dedup by seq.
async fn events(
    State(app): AppState,
    Caller(actor): Caller,
    headers: HeaderMap,
    Query(q): Query<StreamQuery>,
) -> Sse<impl Stream<Item = std::result::Result<SseEvent, Infallible>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|h| h.to_str().ok())
        .and_then(|h| h.trim().parse::<Seq>().ok())
        .or(q.since);
    let rx = app.subscribe();
    let since = resume.unwrap_or_else(|| app.kernel.last_seq());
    let backlog = replay(&app, since);
    let stream = futures::stream::unfold(
        (app, actor.id, rx, backlog, since),
        |(app, viewer, mut rx, mut backlog, mut last)| async move {
            loop {
                let next = match backlog.pop_front() {
                    Some(e) => e,
                    None => match rx.recv().await {
                        Ok(e) => e,
                        Err(RecvError::Lagged(_)) => {
                            backlog = replay(&app, last);
                            continue;
                        }
                        Err(RecvError::Closed) => return None,
                    },
                };
                if next.seq <= last {
                    continue;
                }
                last = next.seq;
                if let Some(ev) = state_event(&app, &next, &viewer) {
                    let sse = SseEvent::default()
                        .id(ev.seq.to_string())
                        .event("state")
                        .json_data(&ev)
                        .expect("serializable event");
                    return Some((Ok(sse), (app, viewer, rx, backlog, last)));
                }
            }
        },
    );
    Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

fn replay(app: &App, since: Seq) -> VecDeque<Event> {
    app.kernel.read(|s| {
        s.events()
            .iter()
            .filter(|e| e.seq > since && matches!(e.payload, Payload::StateTransition { .. }))
            .cloned()
            .collect()
    })
}
