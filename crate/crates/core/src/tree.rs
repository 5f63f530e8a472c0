//! Hierarchical classification of entities as a tree of match/remainder splits.

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_entities, ClusterOutcome, ClusterRequest};
use crate::error::{Error, Result};
use crate::filter::{apply_filter, Predicate};
use crate::measures::MeasureTable;
use crate::scalar::Scalar;
use crate::set::EntitySet;

pub type NodeId = usize;

pub const ROOT: NodeId = 0;
pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Match,
    Remainder,
}

/// How a match node was carved out of its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "F: Scalar")]
pub enum SplitRule<F> {
    Predicate(Predicate<F>),
    /// Members of one cluster of a seeded k-means run over the parent.
    Cluster { request: ClusterRequest, cluster: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Node<F> {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub label: String,
    pub kind: NodeKind,
    /// Set on match nodes only; a remainder node is defined by its sibling's rule.
    pub rule: Option<SplitRule<F>>,
    pub sibling: Option<NodeId>,
    /// `(match, remainder)` once split.
    pub children: Option<(NodeId, NodeId)>,
    #[serde(skip)]
    pub set: EntitySet,
    /// Bumped whenever the node's set or children change.
    pub generation: u64,
}

impl<F> Node<F> {
    pub fn count(&self) -> usize {
        self.set.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTree<F> {
    nodes: Vec<Option<Node<F>>>,
    selected: NodeId,
    clock: u64,
}

impl<F: Scalar> ClassificationTree<F> {
    /// A tree whose root holds every entity present in `table`.
    pub fn new(table: &MeasureTable) -> Self {
        let root = Node {
            id: ROOT,
            parent: None,
            label: "all entities".to_owned(),
            kind: NodeKind::Root,
            rule: None,
            sibling: None,
            children: None,
            set: table.entities(),
            generation: 0,
        };
        Self { nodes: vec![Some(root)], selected: ROOT, clock: 0 }
    }

    pub fn root(&self) -> &Node<F> {
        self.nodes[ROOT].as_ref().expect("root always exists")
    }

    pub fn node(&self, id: NodeId) -> Result<&Node<F>> {
        self.nodes.get(id).and_then(Option::as_ref).ok_or(Error::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut Node<F>> {
        self.nodes.get_mut(id).and_then(Option::as_mut).ok_or(Error::UnknownNode(id))
    }

    /// Live nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node<F>> {
        self.nodes.iter().filter_map(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.nodes().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn selected(&self) -> NodeId {
        self.selected
    }

    pub fn selected_set(&self) -> &EntitySet {
        &self.node(self.selected).expect("selection always exists").set
    }

    pub fn select(&mut self, id: NodeId) -> Result<()> {
        self.node(id)?;
        self.selected = id;
        Ok(())
    }

    pub fn relabel(&mut self, id: NodeId, label: &str) -> Result<()> {
        if label.trim().is_empty() {
            return Err(Error::EmptyLabel);
        }
        self.node_mut(id)?.label = label.to_owned();
        Ok(())
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Splits a leaf into entities matching `p` and the remainder.
    pub fn split(
        &mut self,
        table: &MeasureTable,
        id: NodeId,
        p: Predicate<F>,
        match_label: &str,
        remainder_label: &str,
    ) -> Result<(NodeId, NodeId)> {
        check_labels(match_label, remainder_label)?;
        let parent = self.node(id)?;
        if !parent.is_leaf() {
            return Err(Error::AlreadySplit(id));
        }
        let (hit, miss) = apply_filter(table, &parent.set, &p)?;
        Ok(self.attach(id, SplitRule::Predicate(p), hit, miss, match_label, remainder_label))
    }

    /// Turns one cluster of `outcome` into a match child of `id`. The
    /// remainder holds every other entity of the node, including those
    /// excluded from clustering.
    pub fn materialize_cluster(
        &mut self,
        id: NodeId,
        generation: u64,
        outcome: &ClusterOutcome<F>,
        cluster: usize,
        match_label: &str,
        remainder_label: &str,
    ) -> Result<(NodeId, NodeId)> {
        check_labels(match_label, remainder_label)?;
        let parent = self.node(id)?;
        if parent.generation != generation || outcome.request.node != id {
            return Err(Error::StaleCluster(id));
        }
        if !parent.is_leaf() {
            return Err(Error::AlreadySplit(id));
        }
        let hit = outcome.members(cluster)?;
        if !hit.is_subset(&parent.set) {
            return Err(Error::StaleCluster(id));
        }
        let miss = parent.set.difference(&hit);
        let rule = SplitRule::Cluster { request: outcome.request.clone(), cluster };
        Ok(self.attach(id, rule, hit, miss, match_label, remainder_label))
    }

    fn attach(
        &mut self,
        parent: NodeId,
        rule: SplitRule<F>,
        hit: EntitySet,
        miss: EntitySet,
        match_label: &str,
        remainder_label: &str,
    ) -> (NodeId, NodeId) {
        let (m, r) = (self.nodes.len(), self.nodes.len() + 1);
        let generation = self.tick();
        let child = |id, sibling, kind, label: &str, rule, set| Node {
            id,
            parent: Some(parent),
            label: label.to_owned(),
            kind,
            rule,
            sibling: Some(sibling),
            children: None,
            set,
            generation,
        };
        self.nodes.push(Some(child(m, r, NodeKind::Match, match_label, Some(rule), hit)));
        self.nodes.push(Some(child(r, m, NodeKind::Remainder, remainder_label, None, miss)));
        let p = self.nodes[parent].as_mut().unwrap();
        p.children = Some((m, r));
        p.generation = generation;
        (m, r)
    }

    /// Removes the split row containing `id`: the node, its sibling and all
    /// their descendants. The parent becomes a leaf again.
    pub fn delete_split(&mut self, id: NodeId) -> Result<NodeId> {
        let node = self.node(id)?;
        let Some(parent) = node.parent else {
            return Err(Error::CannotDeleteRoot);
        };
        let (m, r) = self.node(parent)?.children.expect("parent of a child has children");
        let mut stack = vec![m, r];
        while let Some(n) = stack.pop() {
            if let Some(node) = self.nodes[n].take() {
                if let Some((a, b)) = node.children {
                    stack.extend([a, b]);
                }
                if self.selected == n {
                    self.selected = parent;
                }
            }
        }
        let generation = self.tick();
        let p = self.node_mut(parent)?;
        p.children = None;
        p.generation = generation;
        Ok(parent)
    }

    /// Child-index path from the root (0 = match, 1 = remainder).
    pub fn path(&self, id: NodeId) -> Result<Vec<usize>> {
        let mut path = Vec::new();
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            path.push(usize::from(cur.kind == NodeKind::Remainder));
            cur = self.node(p)?;
        }
        path.reverse();
        Ok(path)
    }

    pub fn resolve_path(&self, path: &[usize]) -> Option<NodeId> {
        let mut cur = ROOT;
        for &step in path {
            let (m, r) = self.node(cur).ok()?.children?;
            cur = match step {
                0 => m,
                1 => r,
                _ => return None,
            };
        }
        Some(cur)
    }

    /// Split nodes in pre-order, so every target exists before it is split.
    fn preorder_splits(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(n) = stack.pop() {
            if let Some((m, r)) = self.nodes[n].as_ref().and_then(|n| n.children) {
                out.push(n);
                stack.extend([r, m]);
            }
        }
        out
    }

    /// Recomputes every node set against a new measure table, keeping the
    /// structure, ids and labels. Returns warnings for cluster splits that
    /// could not be re-run.
    pub fn recompute(&mut self, table: &MeasureTable) -> Vec<String> {
        let mut warnings = Vec::new();
        let generation = self.tick();
        let root = self.nodes[ROOT].as_mut().unwrap();
        root.set = table.entities();
        root.generation = generation;
        for id in self.preorder_splits() {
            let parent_set = self.nodes[id].as_ref().unwrap().set.clone();
            let (m, r) = self.nodes[id].as_ref().unwrap().children.unwrap();
            let rule = self.nodes[m].as_ref().unwrap().rule.clone().expect("match nodes carry a rule");
            let hit = match evaluate(&rule, table, &parent_set) {
                Ok(hit) => hit,
                Err(e) => {
                    warnings.push(format!("node {m}: {e}; match set left empty"));
                    EntitySet::new()
                }
            };
            let miss = parent_set.difference(&hit);
            for (child, set) in [(m, hit), (r, miss)] {
                let node = self.nodes[child].as_mut().unwrap();
                node.set = set;
                node.generation = generation;
            }
            self.nodes[id].as_mut().unwrap().generation = generation;
        }
        warnings
    }

    pub fn export(&self, corpus_id: &str, from: i64, to: i64, created: i64) -> TreeDocument<F> {
        let splits = self
            .preorder_splits()
            .into_iter()
            .map(|id| {
                let (m, r) = self.nodes[id].as_ref().unwrap().children.unwrap();
                let (mn, rn) = (self.nodes[m].as_ref().unwrap(), self.nodes[r].as_ref().unwrap());
                let (predicate, cluster) = match mn.rule.clone() {
                    Some(SplitRule::Predicate(p)) => (Some(p), None),
                    Some(SplitRule::Cluster { request, cluster }) => (None, Some(ClusterSplit { request, cluster })),
                    None => (None, None),
                };
                SplitDocument {
                    path: self.path(id).unwrap(),
                    predicate,
                    cluster,
                    match_label: mn.label.clone(),
                    remainder_label: rn.label.clone(),
                }
            })
            .collect();
        TreeDocument {
            version: DOCUMENT_VERSION,
            corpus_id: corpus_id.to_owned(),
            created,
            range: DocumentRange { from, to },
            root_label: Some(self.root().label.clone()),
            splits,
        }
    }

    /// Replays a document's splits over `table`. A corpus id mismatch is
    /// reported as a warning; counts may then differ from the original.
    pub fn import(doc: &TreeDocument<F>, table: &MeasureTable, corpus_id: &str) -> Result<(Self, Vec<String>)> {
        if doc.version != DOCUMENT_VERSION {
            return Err(Error::MalformedDocument(format!("unsupported version {}", doc.version)));
        }
        let mut warnings = Vec::new();
        if doc.corpus_id != corpus_id {
            warnings.push(format!(
                "document was built on corpus {} but is replayed on {corpus_id}; counts may differ",
                doc.corpus_id
            ));
        }
        let mut tree = Self::new(table);
        if let Some(label) = &doc.root_label {
            tree.relabel(ROOT, label).map_err(|e| Error::MalformedDocument(e.to_string()))?;
        }
        for (i, s) in doc.splits.iter().enumerate() {
            let malformed = |msg: String| Error::MalformedDocument(format!("split {i}: {msg}"));
            let target = tree
                .resolve_path(&s.path)
                .ok_or_else(|| malformed(format!("path {:?} does not exist", s.path)))?;
            if !tree.node(target)?.is_leaf() {
                return Err(malformed(format!("path {:?} is already split", s.path)));
            }
            let rule = match (&s.predicate, &s.cluster) {
                (Some(p), None) => SplitRule::Predicate(*p),
                (None, Some(c)) => SplitRule::Cluster { request: c.request.clone(), cluster: c.cluster },
                _ => return Err(malformed("exactly one of predicate or cluster is required".into())),
            };
            check_labels(&s.match_label, &s.remainder_label).map_err(|e| malformed(e.to_string()))?;
            let parent_set = tree.node(target)?.set.clone();
            let hit = match evaluate(&rule, table, &parent_set) {
                Ok(hit) => hit,
                Err(e @ (Error::KTooLarge { .. } | Error::UnknownCluster(_))) => {
                    warnings.push(format!("split {i}: {e}; match set left empty"));
                    EntitySet::new()
                }
                Err(e) => return Err(malformed(e.to_string())),
            };
            let miss = parent_set.difference(&hit);
            tree.attach(target, rule, hit, miss, &s.match_label, &s.remainder_label);
        }
        Ok((tree, warnings))
    }

    /// Verifies that every split partitions its parent. Used by tests and debug checks.
    pub fn check_partitions(&self) -> std::result::Result<(), String> {
        for node in self.nodes() {
            if let Some((m, r)) = node.children {
                let (ms, rs) = (&self.node(m).unwrap().set, &self.node(r).unwrap().set);
                if ms.len() + rs.len() != node.set.len() || !ms.is_subset(&node.set) || !rs.is_subset(&node.set) {
                    return Err(format!("split of node {} is not a partition", node.id));
                }
                if ms.difference(rs).len() != ms.len() {
                    return Err(format!("children of node {} overlap", node.id));
                }
            }
        }
        Ok(())
    }
}

fn check_labels(a: &str, b: &str) -> Result<()> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(Error::EmptyLabel);
    }
    Ok(())
}

fn evaluate<F: Scalar>(rule: &SplitRule<F>, table: &MeasureTable, set: &EntitySet) -> Result<EntitySet> {
    match rule {
        SplitRule::Predicate(p) => Ok(apply_filter(table, set, p)?.0),
        SplitRule::Cluster { request, cluster } => {
            let outcome = cluster_entities::<F>(table, set, request, &|| false)?;
            outcome.members(*cluster)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRange {
    pub from: i64,
    pub to: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSplit {
    pub request: ClusterRequest,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SplitDocument<F> {
    pub path: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate<F>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterSplit>,
    pub match_label: String,
    pub remainder_label: String,
}

/// Portable JSON definition of a classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TreeDocument<F> {
    pub version: u32,
    pub corpus_id: String,
    #[serde(default)]
    pub created: i64,
    pub range: DocumentRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_label: Option<String>,
    pub splits: Vec<SplitDocument<F>>,
}
