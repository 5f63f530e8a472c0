use std::cmp::Ordering as CmpOrdering;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use ledgerlens::cluster::{cluster_entities, AxisBounds};
use ledgerlens::ingest::Role;
use ledgerlens::timefmt::format_time;
use ledgerlens::tree::ROOT;
use ledgerlens::{
    histogram, tx_volume, Bucket, ClassificationTree, ClusterRequest, EntityId, EntitySet, NodeId, Predicate64,
    Scale, Series, TreeDocument64,
};
use serde::Deserialize;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::error::{ApiError, ApiResult};
use crate::state::{
    unix_now, AppState, ClusterResult, Job, JobStatus, Session, DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE,
};
use crate::wire::{
    Amount, ApiJson, ApiPath, ApiQuery, EntityCard, EntityPage, EntityTxView, RangeView, Time, TreeView,
};

type AppResult = ApiResult<Json<Value>>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/corpus", get(corpus_info))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/range", put(set_range))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/tree/{node}", axum::routing::delete(delete_split))
        .route("/sessions/{id}/tree/{node}/split", post(split))
        .route("/sessions/{id}/tree/{node}/select", post(select))
        .route("/sessions/{id}/tree/{node}/label", put(relabel))
        .route("/sessions/{id}/tree/{node}/materialize", post(materialize))
        .route("/sessions/{id}/histogram", get(get_histogram))
        .route("/sessions/{id}/volume", get(get_volume))
        .route("/sessions/{id}/cluster", post(start_cluster))
        .route("/sessions/{id}/cluster/{node}", get(get_cluster))
        .route("/sessions/{id}/entities", get(list_entities))
        .route("/sessions/{id}/entity/{eid}", get(get_entity))
        .route("/sessions/{id}/entity/{eid}/txs", get(entity_txs))
        .route("/sessions/{id}/tree-document", get(export_document).post(import_document))
        .route("/jobs/{id}", get(get_job).delete(cancel_job));
    Router::new().nest("/api/v1", api).with_state(state)
}

fn tree_view(s: &Session) -> TreeView {
    TreeView::of(&s.tree, |n| s.current_cluster(n.id).is_some())
}

fn session_json(state: &AppState, s: &Session) -> Value {
    json!({
        "id": s.id,
        "corpus_id": state.corpus.id,
        "created": s.created,
        "range": RangeView::new(s.from, s.to),
        "root_count": s.tree.root().count(),
        "tree": tree_view(s),
    })
}

fn check_range(from: i64, to: i64) -> ApiResult<()> {
    if from >= to {
        return Err(ledgerlens::Error::InvalidRange { from, to }.into());
    }
    Ok(())
}

async fn health(State(state): Shared) -> Json<Value> {
    Json(json!({ "status": "ok", "corpus_id": state.corpus.id, "sessions": state.session_count() }))
}

async fn corpus_info(State(state): Shared) -> Json<Value> {
    let (from, to) = state.default_range();
    Json(json!({
        "corpus_id": state.corpus.id,
        "counts": state.corpus.counts(),
        "range": RangeView::new(from, to),
    }))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    corpus_id: Option<String>,
    from: Option<Time>,
    to: Option<Time>,
}

async fn create_session(State(state): Shared, body: axum::body::Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    // an empty body means "whole corpus"
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    if let Some(id) = &req.corpus_id {
        if *id != state.corpus.id {
            return Err(ApiError::not_found("unknown_corpus", format!("corpus {id} is not loaded")));
        }
    }
    let (dfrom, dto) = state.default_range();
    let (from, to) = (req.from.map_or(dfrom, |t| t.0), req.to.map_or(dto, |t| t.0));
    check_range(from, to)?;
    let table = state.measures(from, to)?;
    let session = Session {
        id: Uuid::new_v4(),
        created: unix_now(),
        from,
        to,
        tree: ClassificationTree::new(&table),
        table,
        clusters: Default::default(),
        job: None,
    };
    let body = session_json(&state, &session);
    state.insert_session(session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): Shared, ApiPath(id): ApiPath<Uuid>) -> AppResult {
    let slot = state.session(id)?;
    let s = slot.inner.read();
    Ok(Json(session_json(&state, &s)))
}

async fn delete_session(State(state): Shared, ApiPath(id): ApiPath<Uuid>) -> ApiResult<StatusCode> {
    if state.remove_session(id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found("unknown_session", format!("no session {id}")))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeBody {
    from: Time,
    to: Time,
}

async fn set_range(State(state): Shared, ApiPath(id): ApiPath<Uuid>, ApiJson(body): ApiJson<RangeBody>) -> AppResult {
    check_range(body.from.0, body.to.0)?;
    let slot = state.session(id)?;
    let table = state.measures(body.from.0, body.to.0)?;
    let mut s = slot.inner.write();
    let warnings = s.tree.recompute(&table);
    s.table = table;
    s.from = body.from.0;
    s.to = body.to.0;
    s.clusters.clear();
    Ok(Json(json!({ "range": RangeView::new(s.from, s.to), "warnings": warnings, "tree": tree_view(&s) })))
}

async fn get_tree(State(state): Shared, ApiPath(id): ApiPath<Uuid>) -> AppResult {
    let slot = state.session(id)?;
    let s = slot.inner.read();
    Ok(Json(serde_json::to_value(tree_view(&s)).unwrap()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitBody {
    predicate: Predicate64,
    match_label: Option<String>,
    remainder_label: Option<String>,
    #[serde(default)]
    select: bool,
}

async fn split(
    State(state): Shared,
    ApiPath((id, node)): ApiPath<(Uuid, NodeId)>,
    ApiJson(body): ApiJson<SplitBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot = state.session(id)?;
    let mut s = slot.inner.write();
    let s = &mut *s;
    let match_label = body.match_label.unwrap_or_else(|| body.predicate.series.name());
    let remainder_label = body.remainder_label.unwrap_or_else(|| "remainder".to_owned());
    let (m, r) = s.tree.split(&s.table, node, body.predicate, &match_label, &remainder_label)?;
    if body.select {
        s.tree.select(m)?;
    }
    let counts = (s.tree.node(m)?.count(), s.tree.node(r)?.count());
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "match": m,
            "remainder": r,
            "match_count": counts.0,
            "remainder_count": counts.1,
            "tree": tree_view(s),
        })),
    ))
}

async fn delete_split(State(state): Shared, ApiPath((id, node)): ApiPath<(Uuid, NodeId)>) -> AppResult {
    let slot = state.session(id)?;
    let mut s = slot.inner.write();
    let parent = s.tree.delete_split(node)?;
    let live: Vec<NodeId> = s.tree.nodes().map(|n| n.id).collect();
    s.clusters.retain(|n, _| live.contains(n));
    Ok(Json(json!({ "parent": parent, "tree": tree_view(&s) })))
}

async fn select(State(state): Shared, ApiPath((id, node)): ApiPath<(Uuid, NodeId)>) -> AppResult {
    let slot = state.session(id)?;
    let mut s = slot.inner.write();
    s.tree.select(node)?;
    Ok(Json(json!({ "selected": node, "count": s.tree.node(node)?.count() })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    label: String,
}

async fn relabel(
    State(state): Shared,
    ApiPath((id, node)): ApiPath<(Uuid, NodeId)>,
    ApiJson(body): ApiJson<LabelBody>,
) -> AppResult {
    let slot = state.session(id)?;
    let mut s = slot.inner.write();
    s.tree.relabel(node, &body.label)?;
    Ok(Json(json!({ "id": node, "label": body.label })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramQuery {
    node: Option<NodeId>,
    key: String,
    variant: Option<String>,
    bins: Option<usize>,
    scale: Option<String>,
}

async fn get_histogram(
    State(state): Shared,
    ApiPath(id): ApiPath<Uuid>,
    ApiQuery(q): ApiQuery<HistogramQuery>,
) -> AppResult {
    let series = Series::parse(&q.key, q.variant.as_deref())?;
    let scale = match q.scale.as_deref() {
        None | Some("auto") | Some("") => None,
        Some(s) => Some(s.parse::<Scale>().map_err(ApiError::bad_request)?),
    };
    let slot = state.session(id)?;
    let s = slot.inner.read();
    let (node, set) = s.node_set(q.node)?;
    let h = histogram::<f64>(&s.table, set, series, q.bins.unwrap_or(ledgerlens::filter::DEFAULT_BINS), scale)?;
    let mut body = serde_json::to_value(&h).unwrap();
    body["node"] = json!(node);
    body["name"] = json!(series.name());
    body["total"] = json!(h.total());
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeQuery {
    node: Option<NodeId>,
    bucket: Option<String>,
    from: Option<Time>,
    to: Option<Time>,
}

async fn get_volume(State(state): Shared, ApiPath(id): ApiPath<Uuid>, ApiQuery(q): ApiQuery<VolumeQuery>) -> AppResult {
    let bucket: Bucket = q.bucket.as_deref().unwrap_or("month").parse().map_err(ApiError::bad_request)?;
    let slot = state.session(id)?;
    let s = slot.inner.read();
    let (node, set) = s.node_set(q.node)?;
    let (from, to) = (q.from.map_or(s.from, |t| t.0), q.to.map_or(s.to, |t| t.0));
    check_range(from, to)?;
    let points: Vec<Value> = tx_volume(&state.corpus.store, &state.corpus.index, set, from, to, bucket)?
        .into_iter()
        .map(|(start, count)| json!({ "start": start, "start_iso": format_time(start), "count": count }))
        .collect();
    Ok(Json(json!({ "node": node, "bucket": bucket, "range": RangeView::new(from, to), "points": points })))
}

#[derive(Deserialize)]
struct ClusterBody {
    node: Option<NodeId>,
    #[serde(flatten)]
    request: Value,
}

async fn start_cluster(
    State(state): Shared,
    ApiPath(id): ApiPath<Uuid>,
    ApiJson(body): ApiJson<ClusterBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot = state.session(id)?;
    let mut s = slot.inner.write();
    let node = body.node.unwrap_or(s.tree.selected());
    let mut request: ClusterRequest = serde_json::from_value(body.request).map_err(|e| ApiError::bad_request(e.to_string()))?;
    request.node = node;
    request.validate()?;
    let set = s.tree.node(node)?.set.clone();
    if request.k > set.len() {
        return Err(ledgerlens::Error::KTooLarge { k: request.k, usable: set.len() }.into());
    }
    if let Some(active) = s.job {
        if state.job(active).is_ok_and(|j| j.is_running()) {
            return Err(ApiError::conflict("job_running", format!("clustering job {active} is still running")));
        }
    }
    let generation = s.tree.node(node)?.generation;
    let job = Arc::new(Job {
        id: Uuid::new_v4(),
        session: id,
        node,
        cancel: AtomicBool::new(false),
        status: parking_lot::Mutex::new(JobStatus::Running),
    });
    s.job = Some(job.id);
    state.insert_job(job.clone());
    let table = s.table.clone();
    drop(s);

    let job_id = job.id;
    let state2 = state.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = cluster_entities::<f64>(&table, &set, &request, &|| job.cancelled());
        let status = match outcome {
            Ok(outcome) => {
                let result = Arc::new(ClusterResult { generation, outcome });
                let view = result.view();
                if let Ok(slot) = state2.session(job.session) {
                    let mut s = slot.inner.write();
                    // a range change or re-split while running makes the result stale; keep it but it won't match
                    s.clusters.insert(node, result);
                    if s.job == Some(job.id) {
                        s.job = None;
                    }
                }
                JobStatus::Done { result: view }
            }
            Err(ledgerlens::Error::Cancelled) => JobStatus::Cancelled,
            Err(e) => {
                let api = ApiError::from(e);
                JobStatus::Failed { error: api.code.to_owned(), message: api.message }
            }
        };
        if !matches!(status, JobStatus::Done { .. }) {
            if let Ok(slot) = state2.session(job.session) {
                let mut s = slot.inner.write();
                if s.job == Some(job.id) {
                    s.job = None;
                }
            }
        }
        *job.status.lock() = status;
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id, "node": node, "status": "running" }))))
}

async fn get_job(State(state): Shared, ApiPath(id): ApiPath<Uuid>) -> AppResult {
    let job = state.job(id)?;
    let status = job.status.lock().clone();
    let mut body = serde_json::to_value(status).unwrap();
    body["id"] = json!(job.id);
    body["session"] = json!(job.session);
    body["node"] = json!(job.node);
    Ok(Json(body))
}

async fn cancel_job(State(state): Shared, ApiPath(id): ApiPath<Uuid>) -> AppResult {
    let job = state.job(id)?;
    job.cancel.store(true, Ordering::Relaxed);
    Ok(Json(json!({ "id": job.id, "cancel_requested": true })))
}

async fn get_cluster(State(state): Shared, ApiPath((id, node)): ApiPath<(Uuid, NodeId)>) -> AppResult {
    let slot = state.session(id)?;
    let s = slot.inner.read();
    s.tree.node(node)?;
    let result = s
        .current_cluster(node)
        .ok_or_else(|| ApiError::not_found("no_cluster_result", format!("node {node} has no current cluster result")))?;
    Ok(Json(serde_json::to_value(result.view()).unwrap()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterializeBody {
    cluster: usize,
    match_label: Option<String>,
    remainder_label: Option<String>,
    #[serde(default)]
    select: bool,
}

async fn materialize(
    State(state): Shared,
    ApiPath((id, node)): ApiPath<(Uuid, NodeId)>,
    ApiJson(body): ApiJson<MaterializeBody>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot = state.session(id)?;
    let mut s = slot.inner.write();
    s.tree.node(node)?;
    let result = s
        .clusters
        .get(&node)
        .cloned()
        .ok_or_else(|| ApiError::not_found("no_cluster_result", format!("node {node} has no cluster result")))?;
    let match_label = body.match_label.unwrap_or_else(|| format!("cluster {}", body.cluster));
    let remainder_label = body.remainder_label.unwrap_or_else(|| "other clusters".to_owned());
    let (m, r) =
        s.tree.materialize_cluster(node, result.generation, &result.outcome, body.cluster, &match_label, &remainder_label)?;
    if body.select {
        s.tree.select(m)?;
    }
    let counts = (s.tree.node(m)?.count(), s.tree.node(r)?.count());
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "match": m,
            "remainder": r,
            "match_count": counts.0,
            "remainder_count": counts.1,
            "tree": tree_view(&s),
        })),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntitiesQuery {
    node: Option<NodeId>,
    cluster: Option<usize>,
    sort: Option<String>,
    variant: Option<String>,
    order: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

enum SortKey {
    Entity,
    NumTxs,
    Series(Series),
}

impl SortKey {
    fn parse(key: Option<&str>, variant: Option<&str>) -> ApiResult<Self> {
        match key.map(str::trim) {
            None | Some("") | Some("entity") => Ok(SortKey::Entity),
            Some("num_txs") => Ok(SortKey::NumTxs),
            Some(k) => Ok(SortKey::Series(Series::parse(k, variant.or(Some("average")))?)),
        }
    }

    fn name(&self) -> String {
        match self {
            SortKey::Entity => "entity".into(),
            SortKey::NumTxs => "num_txs".into(),
            SortKey::Series(s) => s.name(),
        }
    }
}

/// Sorts by key in the requested order, undefined values last, ties by entity id.
fn sort_entities(table: &ledgerlens::MeasureTable, set: &EntitySet, key: &SortKey, descending: bool) -> Vec<EntityId> {
    let value = |e: EntityId| -> Option<f64> {
        match key {
            SortKey::Entity => Some(e.0 as f64),
            SortKey::NumTxs => table.get(e).map(|m| m.num_txs as f64),
            SortKey::Series(s) => table.value::<f64>(e, *s),
        }
    };
    let mut keyed: Vec<(Option<f64>, EntityId)> = set.iter().map(|e| (value(e), e)).collect();
    keyed.sort_by(|(va, ea), (vb, eb)| {
        let by_value = match (va, vb) {
            (Some(a), Some(b)) => {
                let c = a.total_cmp(b);
                if descending {
                    c.reverse()
                } else {
                    c
                }
            }
            (Some(_), None) => CmpOrdering::Less,
            (None, Some(_)) => CmpOrdering::Greater,
            (None, None) => CmpOrdering::Equal,
        };
        by_value.then(ea.cmp(eb))
    });
    keyed.into_iter().map(|(_, e)| e).collect()
}

async fn list_entities(
    State(state): Shared,
    ApiPath(id): ApiPath<Uuid>,
    ApiQuery(q): ApiQuery<EntitiesQuery>,
) -> AppResult {
    let key = SortKey::parse(q.sort.as_deref(), q.variant.as_deref())?;
    let descending = match q.order.as_deref().unwrap_or("asc") {
        "asc" => false,
        "desc" => true,
        other => return Err(ApiError::bad_request(format!("order must be asc or desc, got `{other}`"))),
    };
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
    }
    let page = q.page.unwrap_or(0);
    let slot = state.session(id)?;
    let s = slot.inner.read();
    let (node, node_set) = s.node_set(q.node)?;
    let cluster_set;
    let set = match q.cluster {
        None => node_set,
        Some(c) => {
            let result = s.current_cluster(node).ok_or_else(|| {
                ApiError::not_found("no_cluster_result", format!("node {node} has no current cluster result"))
            })?;
            cluster_set = result.outcome.members(c)?;
            &cluster_set
        }
    };
    let bounds = AxisBounds::<f64>::of(&s.table, node_set);
    let ordered = sort_entities(&s.table, set, &key, descending);
    let entities = ordered
        .iter()
        .skip(page.saturating_mul(page_size))
        .take(page_size)
        .map(|&e| EntityCard::new(e, state.corpus.index.tag(e), s.table.get(e), &bounds))
        .collect();
    let body = EntityPage {
        node,
        cluster: q.cluster,
        sort: key.name(),
        order: if descending { "desc" } else { "asc" }.to_owned(),
        total: ordered.len(),
        page,
        page_size,
        entities,
    };
    Ok(Json(serde_json::to_value(body).unwrap()))
}

fn entity_id(state: &AppState, eid: u32) -> ApiResult<EntityId> {
    if (eid as usize) < state.corpus.index.num_entities() {
        Ok(EntityId(eid))
    } else {
        Err(ApiError::not_found("unknown_entity", format!("no entity {eid}")))
    }
}

async fn get_entity(State(state): Shared, ApiPath((id, eid)): ApiPath<(Uuid, u32)>) -> AppResult {
    let e = entity_id(&state, eid)?;
    let slot = state.session(id)?;
    let s = slot.inner.read();
    let bounds = AxisBounds::<f64>::of(&s.table, &s.tree.root().set);
    let card = EntityCard::new(e, state.corpus.index.tag(e), s.table.get(e), &bounds);
    let addresses: Vec<&str> =
        state.corpus.index.members(e).iter().map(|&a| state.corpus.store.address(a)).collect();
    let mut body = serde_json::to_value(card).unwrap();
    body["addresses"] = json!(addresses);
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TxQuery {
    role: String,
    from: Option<Time>,
    to: Option<Time>,
}

async fn entity_txs(
    State(state): Shared,
    ApiPath((id, eid)): ApiPath<(Uuid, u32)>,
    ApiQuery(q): ApiQuery<TxQuery>,
) -> AppResult {
    let e = entity_id(&state, eid)?;
    let role = match q.role.as_str() {
        "sender" | "input" => Role::Input,
        "receiver" | "output" => Role::Output,
        other => return Err(ApiError::bad_request(format!("role must be sender or receiver, got `{other}`"))),
    };
    let slot = state.session(id)?;
    let (from, to) = {
        let s = slot.inner.read();
        (q.from.map_or(s.from, |t| t.0), q.to.map_or(s.to, |t| t.0))
    };
    check_range(from, to)?;
    let txs: Vec<EntityTxView> = state
        .corpus
        .index
        .transactions(&state.corpus.store, e, role, from, to)
        .into_iter()
        .map(|t| EntityTxView { time: t.time, time_iso: format_time(t.time), txid: t.txid, amount: Amount::new(t.amount) })
        .collect();
    let role = if role == Role::Input { "sender" } else { "receiver" };
    Ok(Json(json!({ "entity": e, "role": role, "range": RangeView::new(from, to), "transactions": txs })))
}

async fn export_document(State(state): Shared, ApiPath(id): ApiPath<Uuid>) -> AppResult {
    let slot = state.session(id)?;
    let s = slot.inner.read();
    let doc = s.tree.export(&state.corpus.id, s.from, s.to, unix_now());
    Ok(Json(serde_json::to_value(doc).unwrap()))
}

async fn import_document(
    State(state): Shared,
    ApiPath(id): ApiPath<Uuid>,
    ApiJson(doc): ApiJson<TreeDocument64>,
) -> AppResult {
    let (from, to) = (doc.range.from, doc.range.to);
    check_range(from, to)?;
    let slot = state.session(id)?;
    let table = state.measures(from, to)?;
    let (tree, warnings) = ClassificationTree::import(&doc, &table, &state.corpus.id)?;
    let mut s = slot.inner.write();
    s.tree = tree;
    s.table = table;
    s.from = from;
    s.to = to;
    s.clusters.clear();
    debug_assert!(s.tree.node(ROOT).is_ok());
    Ok(Json(json!({ "warnings": warnings, "range": RangeView::new(from, to), "tree": tree_view(&s) })))
}
