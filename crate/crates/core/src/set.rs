use serde::{Deserialize, Serialize};

use crate::ids::EntityId;

/// Sorted, duplicate-free set of entity ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntitySet(Vec<EntityId>);

impl EntitySet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Caller guarantees `ids` is strictly ascending.
    pub fn from_sorted(ids: Vec<EntityId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        Self(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = EntityId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[EntityId] {
        &self.0
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &EntitySet) -> EntitySet {
        let mut out = Vec::with_capacity(self.len().saturating_sub(other.len()));
        let mut j = 0;
        for &id in &self.0 {
            while j < other.0.len() && other.0[j] < id {
                j += 1;
            }
            if j >= other.0.len() || other.0[j] != id {
                out.push(id);
            }
        }
        EntitySet(out)
    }

    pub fn is_subset(&self, other: &EntitySet) -> bool {
        self.difference(other).is_empty()
    }

    /// Dense membership mask over `0..n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for id in &self.0 {
            if id.index() < n {
                m[id.index()] = true;
            }
        }
        m
    }
}

impl FromIterator<EntityId> for EntitySet {
    fn from_iter<I: IntoIterator<Item = EntityId>>(iter: I) -> Self {
        let mut v: Vec<EntityId> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = EntityId;
    type IntoIter = std::iter::Copied<std::slice::Iter<'a, EntityId>>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter().copied()
    }
}
