//! Request and response bodies.

use std::collections::BTreeMap;

use axum::extract::{FromRequest, FromRequestParts};
use ledgerlens::cluster::{AxisBounds, ClusterSummary};
use ledgerlens::timefmt::{format_btc, format_time, parse_time};
use ledgerlens::tree::{Node, NodeKind, SplitRule};
use ledgerlens::{ActivityMeasures, EntityId, MeasureKey, NodeId, Series, Tag, Tree64};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::ApiError;

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct ApiJson<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct ApiQuery<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
pub struct ApiPath<T>(pub T);

/// Unix seconds given as a JSON number or any string accepted by `parse_time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Time(pub i64);

impl<'de> Deserialize<'de> for Time {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(t) => Ok(Time(t)),
            Raw::Str(s) => parse_time(&s).map(Time).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeView {
    pub from: i64,
    pub to: i64,
    pub from_iso: Option<String>,
    pub to_iso: Option<String>,
}

impl RangeView {
    pub fn new(from: i64, to: i64) -> Self {
        let iso = |t: i64| (t != i64::MIN && t != i64::MAX).then(|| format_time(t));
        Self { from, to, from_iso: iso(from), to_iso: iso(to) }
    }
}

/// Satoshi amount with an 8-decimal BTC display string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amount {
    pub sat: u64,
    pub btc: String,
}

impl Amount {
    pub fn new(sat: u64) -> Self {
        Self { sat, btc: format_btc(sat) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub label: String,
    pub kind: NodeKind,
    pub count: usize,
    pub path: Vec<usize>,
    pub children: Option<(NodeId, NodeId)>,
    pub rule: Option<SplitRule<f64>>,
    pub generation: u64,
    pub has_cluster_result: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeView {
    pub selected: NodeId,
    pub nodes: Vec<NodeView>,
}

impl TreeView {
    pub fn of(tree: &Tree64, has_cluster: impl Fn(&Node<f64>) -> bool) -> Self {
        let nodes = tree
            .nodes()
            .map(|n| NodeView {
                id: n.id,
                parent: n.parent,
                label: n.label.clone(),
                kind: n.kind,
                count: n.count(),
                path: tree.path(n.id).unwrap_or_default(),
                children: n.children,
                rule: n.rule.clone(),
                generation: n.generation,
                has_cluster_result: has_cluster(n),
            })
            .collect();
        Self { selected: tree.selected(), nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagView {
    pub label: String,
    pub category: String,
}

impl From<&Tag> for TagView {
    fn from(t: &Tag) -> Self {
        Self { label: t.label.clone(), category: t.category.as_str().to_owned() }
    }
}

/// One entity for the browser grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCard {
    pub entity: EntityId,
    pub tag: Option<TagView>,
    pub active: bool,
    /// Distinct transactions in either role.
    pub num_txs: Option<u64>,
    /// Every selectable series by name; `null` when undefined.
    pub measures: BTreeMap<String, Option<f64>>,
    /// Amount series as satoshis (averages rounded) with BTC strings.
    pub amounts: BTreeMap<String, Option<Amount>>,
    /// Normalized positions on the eight glyph axes.
    pub glyph: Vec<Option<f64>>,
}

impl EntityCard {
    pub fn new(entity: EntityId, tag: Option<&Tag>, m: Option<&ActivityMeasures>, bounds: &AxisBounds<f64>) -> Self {
        let mut measures = BTreeMap::new();
        let mut amounts = BTreeMap::new();
        for series in Series::all() {
            let v = m.and_then(|m| m.value::<f64>(series));
            if series.key == MeasureKey::AmountRec || series.key == MeasureKey::AmountSent {
                amounts.insert(series.name(), v.map(|v| Amount::new(v.round() as u64)));
            }
            measures.insert(series.name(), v);
        }
        Self {
            entity,
            tag: tag.map(TagView::from),
            active: m.is_some(),
            num_txs: m.map(|m| m.num_txs),
            measures,
            amounts,
            glyph: m.map(|m| bounds.glyph(m)).unwrap_or_else(|| vec![None; 8]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPage {
    pub node: NodeId,
    pub cluster: Option<usize>,
    pub sort: String,
    pub order: String,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub entities: Vec<EntityCard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTxView {
    pub time: i64,
    pub time_iso: String,
    pub txid: String,
    pub amount: Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResultView {
    pub node: NodeId,
    pub generation: u64,
    pub k: usize,
    pub seed: u64,
    pub features: Vec<Series>,
    pub excluded: usize,
    pub iterations: usize,
    pub converged: bool,
    pub inertia_history: Vec<f64>,
    pub clusters: Vec<ClusterSummary<f64>>,
}
